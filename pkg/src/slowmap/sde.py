"""SDE systems and Euler-Maruyama simulation of paths and short bursts.

Drift and dispersion callables are batched: they take an ``(n, D)`` array of
states and return ``(n, D)`` and ``(n, D, M)`` arrays respectively.  A system
may also supply ``noise(x, dw)`` computing ``nu(x) dw`` without materialising
the dispersion tensor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError, ConfigError
from .rng import SeedSpec, normals_for_keys

BLOWUP = 1e8
# steps per chunk of pre-generated increments on long paths
_PATH_CHUNK = 32768
# simulated rows (points x reps) advanced together by simulate_bursts_many
_BURST_ROWS = 131072


@dataclass(frozen=True)
class LatentChart:
    """Coordinates in which a system is integrated instead of its own.

    States are pulled back with ``inverse``, advanced by the ``hidden`` system
    and pushed forward again with ``forward``.
    """

    hidden: "SdeSystem"
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SdeSystem:
    name: str
    dim: int
    noise_dim: int
    eps: float
    drift: Optional[Callable[[np.ndarray], np.ndarray]]
    dispersion: Callable[[np.ndarray], np.ndarray]
    slow_dim: Optional[int] = None
    fast_dim: Optional[int] = None
    chart: Optional[LatentChart] = None
    noise: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def drift_at(self, x) -> np.ndarray:
        if self.drift is None:
            raise NotImplementedError(f"{self.name}: drift is only available in latent coordinates")
        return self.drift(np.asarray(x, dtype=float)[None])[0]

    def dispersion_at(self, x) -> np.ndarray:
        return self.dispersion(np.asarray(x, dtype=float)[None])[0]

    @property
    def default_dt(self) -> float:
        return self.eps / 20.0


@dataclass
class Trajectory:
    dt: float
    states: np.ndarray  # (n_steps + 1, D)
    seed: SeedSpec

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    def to_csv(self, path, system: SdeSystem, extra_meta: Optional[dict] = None) -> None:
        """Write ``t,x1,...,xD`` rows plus a ``<path>.json`` metadata sidecar."""
        d = self.states.shape[1]
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(d)])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")
        meta = {"system": system.name, "dt": self.dt, "seed": self.seed.to_dict(),
                "eps": system.eps, "n_steps": len(self.states) - 1}
        meta.update(extra_meta or {})
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def read_trajectory_csv(path) -> np.ndarray:
    """States (without the time column) of a trajectory CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:]


def _raise_blowup(x: np.ndarray, step: int) -> None:
    bad = ~np.isfinite(x) | (np.abs(x) > BLOWUP)
    where = np.argwhere(bad)[0]
    coord = int(where[-1])
    raise BlowUpError(
        f"simulation blew up at step {step}: coordinate x{coord + 1} = {x[tuple(where)]!r}",
        step=step, coordinate=coord)


def _diffuse(sys: SdeSystem, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
    if sys.noise is not None:
        return sys.noise(x, dw)
    return np.einsum("ndm,nm->nd", sys.dispersion(x), dw)


def _advance(sys: SdeSystem, x: np.ndarray, dt: float, dw: np.ndarray) -> np.ndarray:
    """One batched Euler-Maruyama step; ``x`` is ``(n, D)``, ``dw`` is ``(n, M)``."""
    return x + sys.drift(x) * dt + _diffuse(sys, x, dw)


def _pull(sys: SdeSystem):
    """System actually integrated, plus maps into and out of its coordinates."""
    if sys.chart is None:
        return sys, None, None
    return sys.chart.hidden, sys.chart.inverse, sys.chart.forward


def em_step(sys: SdeSystem, x, dt: float, dw) -> np.ndarray:
    """``x + mu(x) dt + nu(x) dW`` for a single state (through the chart if the system has one)."""
    x = np.asarray(x, dtype=float)[None]
    dw = np.asarray(dw, dtype=float)[None]
    inner, pull, push = _pull(sys)
    with np.errstate(all="ignore"):
        if pull is None:
            out = _advance(inner, x, dt, dw)[0]
        else:
            out = push(_advance(inner, pull(x), dt, dw))[0]
    bad = ~np.isfinite(out)
    if bad.any():
        coord = int(np.flatnonzero(bad)[0])
        raise BlowUpError(f"non-finite Euler-Maruyama result in coordinate x{coord + 1}",
                          coordinate=coord)
    return out


def _validate(sys: SdeSystem, dt: float) -> None:
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if not dt < sys.eps:
        raise ConfigError(f"dt={dt} must be a fraction of the fast time scale eps={sys.eps}")


def simulate_path(sys: SdeSystem, x0, dt: float, n_steps: int, seed: SeedSpec) -> Trajectory:
    _validate(sys, dt)
    inner, pull, push = _pull(sys)
    x = np.asarray(x0, dtype=float).reshape(1, sys.dim)
    if pull is not None:
        x = pull(x)
    states = np.empty((n_steps + 1, sys.dim))
    states[0] = x[0]
    sq = np.sqrt(dt)
    m = sys.noise_dim
    key = np.uint64(seed.key)
    with np.errstate(all="ignore"):
        for start in range(0, n_steps, _PATH_CHUNK):
            stop = min(n_steps, start + _PATH_CHUNK)
            dws = normals_for_keys(key, (stop - start) * m, offset=start * m).reshape(-1, 1, m) * sq
            for i in range(stop - start):
                x = _advance(inner, x, dt, dws[i])
                states[start + i + 1] = x[0]
            block = states[start + 1:stop + 1]
            if not np.max(np.abs(block)) <= BLOWUP:
                first = int(np.flatnonzero(~(np.abs(block) <= BLOWUP).all(axis=1))[0])
                _raise_blowup(block[first:first + 1], start + first + 1)
    if push is not None:
        states = push(states)
        states[0] = np.asarray(x0, dtype=float)
    return Trajectory(dt, states, seed)


def simulate_bursts_many(sys: SdeSystem, x0s, dt: float, burst_steps: int, reps: int,
                         seeds) -> np.ndarray:
    """Burst endpoints ``(P, reps, D)`` for ``P`` starting states.

    Point ``p`` rep ``j`` draws its increments from ``seeds[p].child("rep", j)``,
    so results are independent of how points and reps are batched.
    """
    _validate(sys, dt)
    if reps < 1:
        raise ConfigError("need at least one burst repetition")
    x0s = np.asarray(x0s, dtype=float).reshape(-1, sys.dim)
    seeds = list(seeds)
    if len(seeds) != len(x0s):
        raise ConfigError("need one seed per starting state")
    out = np.repeat(x0s[:, None, :], reps, axis=1)
    if burst_steps == 0 or len(x0s) == 0:
        return out
    inner, pull, push = _pull(sys)
    m = sys.noise_dim
    sq = np.sqrt(dt)
    per_chunk = max(1, _BURST_ROWS // reps)
    for lo in range(0, len(x0s), per_chunk):
        hi = min(len(x0s), lo + per_chunk)
        keys = np.concatenate([s.child_keys("rep", reps) for s in seeds[lo:hi]])
        x = out[lo:hi].reshape(-1, sys.dim)
        if pull is not None:
            x = pull(x)
        with np.errstate(all="ignore"):
            for i in range(burst_steps):
                dw = normals_for_keys(keys, m, offset=i * m) * sq
                x = _advance(inner, x, dt, dw)
                if not np.max(np.abs(x)) <= BLOWUP:
                    _raise_blowup(x, i + 1)
        if push is not None:
            x = push(x)
        out[lo:hi] = x.reshape(hi - lo, reps, sys.dim)
    return out


def simulate_bursts(sys: SdeSystem, x0, dt: float, burst_steps: int, reps: int,
                    seed: SeedSpec) -> np.ndarray:
    """Endpoints ``(reps, D)`` of independent ``burst_steps``-step paths from ``x0``."""
    return simulate_bursts_many(sys, np.asarray(x0, dtype=float)[None], dt, burst_steps,
                                reps, [seed])[0]
