"""Supervised datasets of triplets ``(x, P(x), sigma(x))``.

Points are subsampled from one long trajectory, ``P(x)`` is the mean endpoint
of many short bursts started at ``x``, and ``sigma(x) = nu(x) nu(x)^T`` is the
local noise covariance (or its one-step Monte-Carlo estimate).
"""
from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DegenerateError
from .linalg import sym_eig
from .rng import SeedSpec, as_seed
from .sde import SdeSystem, Trajectory, simulate_bursts, simulate_bursts_many, simulate_path
from .systems import ObservedPair

FORMAT_VERSION = 1


class NoGapError(DegenerateError):
    pass


class DatasetInstance(NamedTuple):
    x: np.ndarray
    px: np.ndarray
    cov: np.ndarray


@dataclass
class Dataset:
    x: np.ndarray    # (M, D)
    px: np.ndarray   # (M, D)
    cov: np.ndarray  # (M, D, D)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i) -> DatasetInstance:
        return DatasetInstance(self.x[i], self.px[i], self.cov[i])

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx, **meta) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.x[idx], self.px[idx], self.cov[idx], {**self.meta, **meta})

    # ------------------------------------------------------------ file format

    def dumps(self) -> str:
        header = {**self.meta, "M": len(self), "format_version": FORMAT_VERSION}
        lines = [json.dumps(header, sort_keys=True)]
        for x, px, cov in zip(self.x, self.px, self.cov):
            lines.append(json.dumps({"x": x.tolist(), "px": px.tolist(), "cov": cov.tolist()}))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise ConfigError(f"{path}: empty dataset file")
        meta = json.loads(lines[0])
        if meta.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported dataset format_version {meta.get('format_version')!r}")
        recs = [json.loads(ln) for ln in lines[1:]]
        d = int(meta.get("D", len(recs[0]["x"]) if recs else 0))
        x = np.array([r["x"] for r in recs], dtype=float).reshape(-1, d)
        px = np.array([r["px"] for r in recs], dtype=float).reshape(-1, d)
        cov = np.array([r["cov"] for r in recs], dtype=float).reshape(-1, d, d)
        return cls(x, px, cov, meta)


# ------------------------------------------------------------------ operations

def subsample(traj: Trajectory, m: int, seed: SeedSpec) -> np.ndarray:
    """``m`` states drawn uniformly without replacement, kept in trajectory order."""
    n = len(traj.states)
    if m > n:
        raise ConfigError(f"cannot subsample {m} points from a trajectory of {n} states")
    idx = np.sort(seed.permutation(n)[:m])
    return traj.states[idx]


def covariance_analytic(sys: SdeSystem, x) -> np.ndarray:
    """``nu(x) nu(x)^T`` for one state ``(D,)`` or a batch ``(n, D)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    nu = sys.dispersion(x[None] if single else x)
    cov = nu @ np.swapaxes(nu, 1, 2)
    return cov[0] if single else cov


def covariance_empirical(sys: SdeSystem, x, dt: float, j: int, seed: SeedSpec) -> np.ndarray:
    """One-step Monte-Carlo estimate of ``sigma(x)`` from ``j`` parallel Euler steps."""
    if j < 2:
        raise ConfigError("covariance estimate needs at least two samples")
    ends = simulate_bursts(sys, x, dt, 1, j, seed)
    dev = ends - ends.mean(axis=0)
    cov = dev.T @ dev / (dt * j)
    return 0.5 * (cov + cov.T)


def _spectra(covs) -> np.ndarray:
    return np.array([sym_eig(c).eigenvalues for c in covs])


def choose_tau(covariances, df: int, c: float = 5.0) -> float:
    """``c`` times the mean inverse of the ``df`` largest eigenvalues over all points."""
    if not c > 0 or df < 1:
        raise ConfigError("choose_tau needs c > 0 and df >= 1")
    spectra = _spectra(covariances)
    if spectra.size == 0:
        raise ConfigError("choose_tau needs at least one covariance")
    fast = np.abs(spectra[:, -df:])
    if np.any(fast == 0.0):
        raise DegenerateError("zero eigenvalue among the fast cluster")
    return float(c * np.mean(1.0 / fast))


def slow_dim_at(eigenvalues, gap_ratio: float) -> Optional[int]:
    """Number of eigenvalues below the largest multiplicative gap, or None without a gap."""
    lam = np.sort(np.abs(np.asarray(eigenvalues, dtype=float)))
    if len(lam) < 2:
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = lam[1:] / lam[:-1]
    ratios = np.where(np.isnan(ratios), 1.0, ratios)  # 0/0: no gap between two zeros
    k = int(np.argmax(ratios))
    if not ratios[k] > gap_ratio:
        return None
    return k + 1


def estimate_slow_dim(spectra, gap_ratio: float = 100.0) -> int:
    """Majority vote over points of the per-point slow dimension."""
    if not gap_ratio > 1:
        raise ConfigError("gap_ratio must exceed 1")
    spectra = [np.asarray(s, dtype=float) for s in spectra]
    if not spectra:
        raise ConfigError("no spectra given")
    if len({len(s) for s in spectra}) != 1:
        raise ConfigError("spectra have different lengths")
    votes = Counter(slow_dim_at(s, gap_ratio) for s in spectra)
    votes.pop(None, None)
    if not votes:
        raise NoGapError(f"no spectral gap above {gap_ratio} at any point")
    ds, count = max(votes.items(), key=lambda kv: (kv[1], -kv[0]))
    if 2 * count <= len(spectra):
        raise NoGapError(f"no consistent spectral gap above {gap_ratio} at a majority of points")
    return ds


def burst_steps(tau: float, dt: float) -> int:
    if not tau >= dt:
        raise ConfigError(f"burst horizon tau={tau} shorter than dt={dt}")
    return int(round(tau / dt))


def project_point(sys: SdeSystem, x, tau: float, dt: float, j: int, seed: SeedSpec) -> np.ndarray:
    """Mean endpoint of ``j`` bursts of length ``tau`` started at ``x``."""
    return simulate_bursts(sys, x, dt, burst_steps(tau, dt), j, seed).mean(axis=0)


def project_points(sys: SdeSystem, xs, tau: float, dt: float, j: int, seed: SeedSpec,
                   threads: int = 1, start_index: int = 0) -> np.ndarray:
    """``project_point`` for every row of ``xs``; row ``i`` uses ``seed.child("point", start_index + i)``."""
    xs = np.asarray(xs, dtype=float)
    steps = burst_steps(tau, dt)
    seeds = [seed.child("point", start_index + i) for i in range(len(xs))]

    def work(lo, hi):
        return simulate_bursts_many(sys, xs[lo:hi], dt, steps, j, seeds[lo:hi]).mean(axis=1)

    if len(xs) == 0:
        return np.empty((0, sys.dim))
    chunk = max(1, min(len(xs), 131072 // j))
    bounds = [(lo, min(len(xs), lo + chunk)) for lo in range(0, len(xs), chunk)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda b: work(*b), bounds))
    else:
        parts = [work(*b) for b in bounds]
    return np.concatenate(parts)


# ------------------------------------------------------------------ assembly

@dataclass
class DatasetConfig:
    m: int = 1000
    n_steps: int = 200000
    x0: Optional[list] = None
    dt: Optional[float] = None
    tau: Optional[float] = None
    c: float = 5.0
    tau_points: int = 100
    j: int = 1000
    empirical_cov: bool = False
    cov_j: int = 100000
    integrator: str = "hidden"
    angle_range: Optional[list] = None  # keep points with atan2(x2, x1) inside [lo, hi]
    seed: object = 0  # master seed or SeedSpec record

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seed"] = as_seed(self.seed).to_dict()
        return d


def _angles(x):
    return np.arctan2(x[:, 1], x[:, 0])


def build_dataset(pair: ObservedPair, config: DatasetConfig, threads: int = 1,
                  return_trajectory: bool = False):
    """Simulate, subsample, project and attach covariances; deterministic under ``config.seed``."""
    sim = pair.simulator(config.integrator)
    dt = config.dt if config.dt is not None else sim.default_dt
    x0 = np.zeros(sim.dim) if config.x0 is None else np.asarray(config.x0, dtype=float)
    if x0.shape != (sim.dim,):
        raise ConfigError(f"x0 must have {sim.dim} entries")
    root = as_seed(config.seed)
    traj = simulate_path(sim, x0, dt, config.n_steps, root.child("path"))
    pts = subsample(traj, config.m, root.child("subsample"))
    if config.angle_range is not None:
        lo, hi = config.angle_range
        ang = _angles(pts)
        pts = pts[(ang >= lo) & (ang <= hi)]

    if config.tau is not None:
        tau = float(config.tau)
    else:
        probe = subsample(traj, min(config.tau_points, len(traj.states)), root.child("tau"))
        tau = choose_tau(covariance_analytic(pair.observed, probe), pair.fast_dim, config.c)

    if config.empirical_cov:
        cov_sys = pair.simulator("observed") if pair.observed.drift is not None else sim
        cov = np.array([covariance_empirical(cov_sys, x, dt, config.cov_j, root.child("cov", i))
                        for i, x in enumerate(pts)]).reshape(-1, sim.dim, sim.dim)
    else:
        cov = covariance_analytic(pair.observed, pts) if len(pts) else np.empty((0, sim.dim, sim.dim))
    px = project_points(sim, pts, tau, dt, config.j, root.child("project"), threads=threads)

    meta = {
        "system": pair.name, "params": pair.params, "dt": dt, "tau": tau, "J": config.j,
        "M": len(pts), "seed": root.to_dict(), "eps": pair.observed.eps, "D": sim.dim,
        "slow_dim": pair.slow_dim, "config": config.to_dict(),
    }
    ds = Dataset(pts, px, cov, meta)
    return (ds, traj) if return_trajectory else ds


def split_sizes(m: int, fraction: float) -> tuple:
    n_first = math.ceil(round(fraction * m, 9))
    return n_first, m - n_first


def split(ds: Dataset, fraction: float, seed: SeedSpec) -> tuple:
    """Random disjoint partition into ``ceil(fraction*M)`` and the remaining instances."""
    if not 0 < fraction < 1:
        raise ConfigError("split fraction must lie in (0, 1)")
    n_first, _ = split_sizes(len(ds), fraction)
    perm = seed.permutation(len(ds))
    first, second = np.sort(perm[:n_first]), np.sort(perm[n_first:])
    info = {"fraction": fraction, "seed": seed.to_dict()}
    return (ds.subset(first, split={**info, "part": "train"}),
            ds.subset(second, split={**info, "part": "validation"}))
