import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from slowmap.errors import BlowUpError, ConfigError
from slowmap.rng import SeedSpec
from slowmap.sde import (SdeSystem, em_step, read_trajectory_csv, simulate_bursts,
                         simulate_bursts_many, simulate_path)
from slowmap.systems import make_quad, make_sin2d


def constant_system(drift, disp, eps=1.0):
    drift = np.asarray(drift, dtype=float)
    disp = np.asarray(disp, dtype=float)
    d, m = disp.shape
    return SdeSystem("const", d, m, eps,
                     lambda x: np.broadcast_to(drift, x.shape).copy(),
                     lambda x: np.broadcast_to(disp, (len(x), d, m)).copy())


def test_em_step_trivial():
    still = constant_system([0.0, 0.0], np.zeros((2, 2)))
    assert_array_equal(em_step(still, [0.3, -1.0], 0.01, [0.5, 0.5]), [0.3, -1.0])
    push = constant_system([1.0, 0.0], np.zeros((2, 2)))
    assert_allclose(em_step(push, [0.0, 0.0], 0.01, [0.0, 0.0]), [0.01, 0.0])


def test_em_step_overflow_names_coordinate():
    sys = SdeSystem("boom", 2, 1, 1.0, lambda x: np.column_stack([x[:, 0], np.exp(x[:, 1])]),
                    lambda x: np.zeros((len(x), 2, 1)))
    with pytest.raises(BlowUpError) as info:
        em_step(sys, [0.0, 1000.0], 0.1, [0.0])
    assert info.value.coordinate == 1


def test_blow_up_reports_step():
    sys = constant_system([1e7, 0.0], np.zeros((2, 1)), eps=10.0)
    with pytest.raises(BlowUpError) as info:
        simulate_path(sys, [0.0, 0.0], 1.0, 50, SeedSpec(0))
    assert info.value.step == 11


def test_dt_must_resolve_fast_scale():
    pair = make_quad(1, 1)
    with pytest.raises(ConfigError):
        simulate_path(pair.observed, [0.0, 0.0], 2e-3, 10, SeedSpec(0))


def test_zero_steps():
    pair = make_sin2d()
    traj = simulate_path(pair.observed, [0.2, 0.1], 1e-4, 0, SeedSpec(0))
    assert_array_equal(traj.states, [[0.2, 0.1]])


def test_path_deterministic():
    sys = make_sin2d().simulator("hidden")
    a = simulate_path(sys, [0.0, 0.0], 5e-5, 500, SeedSpec(3))
    b = simulate_path(sys, [0.0, 0.0], 5e-5, 500, SeedSpec(3))
    assert a.states.tobytes() == b.states.tobytes()
    c = simulate_path(sys, [0.0, 0.0], 5e-5, 500, SeedSpec(4))
    assert not np.array_equal(a.states, c.states)


def test_hidden_integrator_is_pushforward_of_hidden_path():
    pair = make_quad(1, 1)
    eps = 1e-3
    obs = simulate_path(pair.simulator("hidden"), [0.25, 0.5], eps / 20, 200, SeedSpec(1))
    hid = simulate_path(pair.hidden, pair.obs_inverse([0.25, 0.5]), eps / 20, 200, SeedSpec(1))
    assert_allclose(obs.states, pair.obs_map(hid.states), atol=1e-12)


def test_ou_mean_decay():
    # fast coordinate of the quadratic system: dz = -z/eps dt + dW/sqrt(eps)
    pair = make_quad(1, 1)
    eps, dt, z0 = 1e-3, 1e-5, 1.0
    n, steps = 10000, 100
    ends = simulate_bursts(pair.hidden, [0.0, z0], dt, steps, n, SeedSpec(2))
    t = steps * dt
    # Euler-Maruyama mean is exact for the discrete recursion; compare with the continuous law
    expected = z0 * np.exp(-t / eps)
    se = ends[:, 1].std(ddof=1) / np.sqrt(n)
    assert abs(ends[:, 1].mean() - expected) < 3 * se + abs(z0 * (1 - dt / eps) ** steps - expected)


def test_ou_stationary_variance_on_path():
    pair = make_quad(1, 1)
    eps = 1e-3
    traj = simulate_path(pair.hidden, [0.0, 0.0], eps / 100, 400000, SeedSpec(5))
    z = traj.states[2000:, 1]
    assert z.var() == pytest.approx(0.5, rel=0.05)


def test_bursts_zero_steps_copies_start():
    sys = make_sin2d().observed
    ends = simulate_bursts(sys, [0.1, 0.2], 1e-4, 0, 5, SeedSpec(0))
    assert_array_equal(ends, np.tile([0.1, 0.2], (5, 1)))


def test_bursts_independent_of_batching():
    sys = make_quad(1, 2).simulator("hidden")
    x0s = np.random.default_rng(0).normal(size=(4, 3))
    seeds = [SeedSpec(1).child("point", i) for i in range(4)]
    together = simulate_bursts_many(sys, x0s, 1e-4, 7, 9, seeds)
    for i in range(4):
        alone = simulate_bursts(sys, x0s[i], 1e-4, 7, 9, seeds[i])
        assert together[i].tobytes() == alone.tobytes()


def test_one_step_burst_covariance():
    # chi-square style: each entry of the sample covariance within 99% normal bounds
    pair = make_sin2d()
    sys = pair.observed
    x0 = np.array([0.4, -0.7])
    dt, j = 1e-5, 200000
    ends = simulate_bursts(sys, x0, dt, 1, j, SeedSpec(8))
    sample = np.cov(ends.T) / dt
    nu = sys.dispersion_at(x0)
    sigma = nu @ nu.T
    for a in range(2):
        for b in range(2):
            sd = np.sqrt((sigma[a, b] ** 2 + sigma[a, a] * sigma[b, b]) / (j - 1))
            assert abs(sample[a, b] - sigma[a, b]) < 2.576 * sd


def test_burst_mean_on_quad():
    pair = make_quad(1, 1)
    eps = 1e-3
    y, z = 0.3, 0.8
    x0 = pair.obs_map([y, z])
    tau = 20 * eps
    ends = simulate_bursts(pair.simulator("hidden"), x0, eps / 100, 2000, 2000, SeedSpec(4))
    mean = ends.mean(axis=0)
    se = ends.std(axis=0, ddof=1) / np.sqrt(len(ends))
    # slow coordinate drifts at unit rate during the burst; 3e-3 covers the
    # Euler-Maruyama bias of E[z^2] at dt = eps/100, which is 1/(2 - 0.01) - 1/2
    assert np.all(np.abs(mean - [y + tau + 0.5, 0.0]) < 3 * se + 3e-3)


def test_trajectory_csv(tmp_path):
    sys = make_quad(1, 1).observed
    traj = simulate_path(sys, [0.0, 0.0], 1e-4, 10, SeedSpec(0))
    path = tmp_path / "traj.csv"
    traj.to_csv(path, sys)
    header = path.read_text().splitlines()[0]
    assert header == "t,x1,x2"
    assert_array_equal(read_trajectory_csv(path), traj.states)
    meta = json.loads((tmp_path / "traj.csv.json").read_text())
    assert meta["system"] == "quad1s1f" and meta["dt"] == 1e-4 and meta["eps"] == 1e-3
