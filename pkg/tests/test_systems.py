from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from slowmap.errors import ConfigError, DomainError
from slowmap.systems import (get_pair, make_halfmoons, make_quad, make_sin2d,
                             pushforward_covariance)


def ito_drift(pair, h, step=1e-4):
    """Observed drift from the hidden SDE by Ito's lemma, with f differentiated numerically."""
    f = pair.obs_map
    d = len(h)
    mu = pair.hidden.drift(h[None])[0]
    nu = pair.hidden.dispersion(h[None])[0]
    sigma = nu @ nu.T
    e = np.eye(d) * step
    grad = np.array([(f(h + e[i]) - f(h - e[i])) / (2 * step) for i in range(d)]).T
    hess = np.empty((d, d, d))
    for i in range(d):
        for j in range(d):
            hess[:, i, j] = (f(h + e[i] + e[j]) - f(h + e[i] - e[j])
                             - f(h - e[i] + e[j]) + f(h - e[i] - e[j])) / (4 * step * step)
    return grad @ mu + 0.5 * np.einsum("kij,ij->k", hess, sigma)


@pytest.mark.parametrize("pair", [make_sin2d(), make_quad(1, 1), make_quad(2, 3)], ids=lambda p: p.name)
def test_observed_drift_matches_ito_lemma(pair):
    rng = np.random.default_rng(1)
    for _ in range(20):
        h = rng.uniform(-1.5, 1.5, size=pair.hidden.dim)
        x = pair.obs_map(h)
        got = pair.observed.drift(x[None])[0]
        assert_allclose(got, ito_drift(pair, h), rtol=1e-5, atol=1e-3)


@pytest.mark.parametrize("pair", [make_sin2d(), make_quad(1, 1), make_quad(2, 8)], ids=lambda p: p.name)
def test_observed_dispersion_matches_pushforward(pair):
    rng = np.random.default_rng(2)
    x = pair.obs_map(rng.uniform(-2, 2, size=(1000, pair.hidden.dim)))
    nu = pair.observed.dispersion(x)
    analytic = nu @ np.swapaxes(nu, 1, 2)
    push = pushforward_covariance(pair, x)
    scale = np.abs(push).max(axis=(1, 2), keepdims=True)
    assert np.all(np.abs(analytic - push) <= 1e-9 * scale)


@pytest.mark.parametrize("pair", [make_sin2d(), make_quad(1, 1), make_quad(2, 3)], ids=lambda p: p.name)
def test_noise_shortcut_matches_dispersion(pair):
    rng = np.random.default_rng(3)
    x = pair.obs_map(rng.uniform(-1, 1, size=(50, pair.hidden.dim)))
    dw = rng.normal(size=(50, pair.observed.noise_dim))
    full = np.einsum("ndm,nm->nd", pair.observed.dispersion(x), dw)
    assert_allclose(pair.observed.noise(x, dw), full, atol=1e-12)


def test_sin2d_examples():
    pair = make_sin2d(1e-3)
    assert_allclose(pair.observed.drift_at([0.0, 0.0]), [0.0, 0.0], atol=0)
    r = 1 / np.sqrt(1e-3)
    assert_allclose(pair.observed.dispersion_at([0.0, 0.0]), [[1.0, r], [0.0, r]])
    assert pair.slow_map(np.array([np.pi, 0.0])) == pytest.approx([np.pi])


def test_halfmoons_examples():
    pair = make_halfmoons()
    assert_allclose(pair.obs_map(np.array([0.0, 1.0])), [1.0, 0.0])
    assert pair.slow_map(np.array([1.0, 0.0]))[0] == pytest.approx(0.0)
    with pytest.raises(DomainError):
        pair.slow_map(np.array([0.0, 0.0]))
    with pytest.raises(ConfigError):
        make_halfmoons(a3=0.0)


def test_halfmoons_branch_round_trip():
    pair = make_halfmoons()
    rng = np.random.default_rng(4)
    h = np.column_stack([rng.uniform(-np.pi, np.pi, 100), rng.uniform(0.5, 1.5, 100)])
    # stay on the principal branch of the angle y + z - 1
    h = h[np.abs(h[:, 0] + h[:, 1] - 1) < np.pi]
    x = pair.obs_map(h)
    assert_allclose(pair.slow_map(x)[:, 0], h[:, 0], atol=1e-10)
    assert_allclose(pair.obs_inverse(x), h, atol=1e-10)


def test_quad_examples():
    eps = 1e-3
    pair = make_quad(2, 3, eps)
    x = np.array([0.4, -0.2, 0.0, 0.0, 0.7])
    drift = pair.observed.drift_at(x)
    assert_allclose(drift[:2], (1 + eps) / eps)
    assert_allclose(drift[2:4], 0.0)
    assert make_quad(1, 1).slow_map(np.array([1.25, 0.5]))[0] == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        make_quad(3, 2)


@settings(max_examples=50, deadline=None)
@given(ds=st.integers(1, 3), extra=st.integers(0, 3), s=st.integers(0, 1000))
def test_quad_round_trip(ds, extra, s):
    pair = make_quad(ds, ds + extra)
    h = np.random.default_rng(s).uniform(-3, 3, size=(20, 2 * ds + extra))
    x = pair.obs_map(h)
    assert_allclose(pair.obs_inverse(x), h, atol=1e-10)
    assert_allclose(pair.slow_map(x), h[:, :ds], atol=1e-10)


def test_sin2d_round_trip():
    pair = make_sin2d()
    h = np.random.default_rng(5).uniform(-4, 4, size=(100, 2))
    assert_allclose(pair.obs_inverse(pair.obs_map(h)), h, atol=1e-10)
    assert_allclose(pair.slow_map(pair.obs_map(h))[:, 0], h[:, 0], atol=1e-10)


def test_identity_observation_pushforward():
    pair = replace(make_sin2d(), obs_map=lambda h: h, obs_inverse=lambda x: x,
                   obs_jacobian=lambda h: np.broadcast_to(np.eye(2), (len(h), 2, 2)))
    h = np.array([0.3, -0.4])
    nu = pair.hidden.dispersion_at(h)
    assert_allclose(pushforward_covariance(pair, h), nu @ nu.T)
    assert pushforward_covariance(pair, h)[0, 1] == 0.0


def test_registry():
    assert get_pair("sin2d").name == "sin2d"
    assert get_pair("quad2s8f").observed.dim == 10
    assert get_pair("quad1s3f", eps=1e-2).params["eps"] == 1e-2
    assert get_pair("halfmoons").name == "halfmoons"
    with pytest.raises(ConfigError):
        get_pair("lorenz")
