"""Evaluation of trained encoders and plot-data exports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import Dataset, slow_dim_at
from .errors import ConfigError, DegenerateError
from .linalg import DimensionError, sym_eig
from .net import Network
from .rng import SeedSpec
from .sde import SdeSystem, simulate_bursts


class DegenerateEncoderError(DegenerateError):
    pass


class DegenerateFitError(DegenerateError):
    pass


# ---------------------------------------------------------------- orthogonality error

def _orthonormal_rows(g: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the rows of ``g``; a row with no new direction is degenerate."""
    out = np.array(g, dtype=float)
    for k in range(len(out)):
        scale = np.linalg.norm(out[k])
        for j in range(k):
            out[k] -= (out[j] @ out[k]) * out[j]
        norm = np.linalg.norm(out[k])
        if norm == 0.0 or norm <= 1e-12 * scale:
            raise DegenerateEncoderError(f"encoder gradient row {k} has no independent direction")
        out[k] /= norm
    return out


def ortho_error_from(grad_rows, fast_vectors, normalize: bool = True) -> float:
    """``||U^T U - I||_F / sqrt(D)`` for ``U = [V^f | G^T]``.

    ``grad_rows`` is the ``(Ds, D)`` encoder Jacobian and ``fast_vectors`` the
    ``(D, Df)`` fast eigenvectors.  With ``normalize`` the gradient rows are
    orthonormalised first, which makes the error blind to reparametrisations
    of the encoder.
    """
    g = np.atleast_2d(np.asarray(grad_rows, dtype=float))
    vf = np.asarray(fast_vectors, dtype=float)
    d = vf.shape[0]
    if g.shape[1] != d or g.shape[0] + vf.shape[1] != d:
        raise DimensionError(f"Ds={g.shape[0]} plus Df={vf.shape[1]} does not equal D={d}")
    if normalize:
        g = _orthonormal_rows(g)
    u = np.hstack([vf, g.T])
    gram = u.T @ u - np.eye(d)
    return float(np.sqrt(np.sum(gram * gram)) / math.sqrt(d))


def fast_vectors(cov, df: int) -> np.ndarray:
    return sym_eig(cov).eigenvectors[:, -df:]


def orthogonality_error(net: Network, x, cov, df: int, normalize: bool = True) -> float:
    x = np.asarray(x, dtype=float)
    if net.slow_dim + df != len(x):
        raise DimensionError(f"Ds={net.slow_dim} plus Df={df} does not equal D={len(x)}")
    return ortho_error_from(net.input_jacobian(x), fast_vectors(cov, df), normalize)


def orthogonality_errors(net: Network, xs, covs, df: int, normalize: bool = True) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if len(xs) and net.slow_dim + df != xs.shape[1]:
        raise DimensionError(f"Ds={net.slow_dim} plus Df={df} does not equal D={xs.shape[1]}")
    jac = net.input_jacobians(xs) if len(xs) else np.empty((0, net.slow_dim, net.in_dim))
    return np.array([ortho_error_from(j, fast_vectors(c, df), normalize) for j, c in zip(jac, covs)])


# ---------------------------------------------------------------- statistics

@dataclass
class ErrorStats:
    median: float
    q1: float
    q3: float
    lower_whisker: float
    upper_whisker: float
    mean: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def error_stats(values) -> ErrorStats:
    """Box-plot statistics: linear-interpolation quartiles, whiskers at 1.5 IQR.

    A whisker is the most extreme datum inside its fence, clamped so it never
    falls inside the box (the matplotlib convention).
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ConfigError("error_stats needs at least one value")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = min(v[v >= q1 - 1.5 * iqr].min(), q1)
    hi = max(v[v <= q3 + 1.5 * iqr].max(), q3)
    return ErrorStats(float(med), float(q1), float(q3), float(lo), float(hi), float(v.mean()), int(v.size))


@dataclass
class AffineFit:
    coef: np.ndarray       # (Ds, Ds): encoded ~ slow_true @ coef + intercept
    intercept: np.ndarray  # (Ds,)
    r2: float

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "intercept": self.intercept.tolist(), "r2": self.r2}


def affine_fit(encoded, slow_true) -> AffineFit:
    """Least-squares affine map from true slow values to encoder values, with mean R^2."""
    e = np.asarray(encoded, dtype=float)
    s = np.asarray(slow_true, dtype=float)
    e = e.reshape(len(e), -1)
    s = s.reshape(len(s), -1)
    if len(e) != len(s):
        raise ConfigError("encoded and slow values differ in length")
    if len(s) < s.shape[1] + 2:
        raise ConfigError(f"need at least {s.shape[1] + 2} points for an affine fit")
    design = np.hstack([s, np.ones((len(s), 1))])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise DegenerateFitError("slow values do not span an affine design")
    sol, *_ = np.linalg.lstsq(design, e, rcond=None)
    resid = e - design @ sol
    ss_res = np.sum(resid ** 2, axis=0)
    ss_tot = np.sum((e - e.mean(axis=0)) ** 2, axis=0)
    r2 = np.where(ss_tot > 0, 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0), 0.0)
    return AffineFit(sol[:-1], sol[-1], float(np.mean(r2)))


# ---------------------------------------------------------------- plot data

@dataclass
class Grid:
    axes: tuple
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # (ny, nx, Ds); NaN where the encoder is undefined

    def to_csv(self, path) -> None:
        ds = self.values.shape[2]
        cols = ["x", "y"] + (["value"] if ds == 1 else [f"value{k + 1}" for k in range(ds)])
        rows = []
        for iy, yv in enumerate(self.ys):
            for ix, xv in enumerate(self.xs):
                rows.append([xv, yv, *self.values[iy, ix]])
        write_csv(path, cols, rows)


def level_set_grid(net: Network, bounds, resolution, axes=(0, 1), fixed=None) -> Grid:
    """Encoder values on a 2-D slice; coordinates outside ``axes`` are pinned to ``fixed``."""
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    if not all(np.isfinite([x_lo, x_hi, y_lo, y_hi])):
        raise ConfigError("grid bounds must be finite")
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    d = net.in_dim
    if d > 2 and fixed is None:
        raise ConfigError("pin the remaining coordinates with fixed= for D > 2")
    base = np.zeros(d) if fixed is None else np.asarray(fixed, dtype=float).copy()
    if base.shape != (d,):
        raise ConfigError(f"fixed must have {d} entries")
    xs = np.linspace(x_lo, x_hi, int(nx))
    ys = np.linspace(y_lo, y_hi, int(ny))
    gx, gy = np.meshgrid(xs, ys)
    pts = np.repeat(base[None], gx.size, axis=0)
    pts[:, axes[0]] = gx.ravel()
    pts[:, axes[1]] = gy.ravel()
    values = np.full((gx.size, net.slow_dim), np.nan)
    ok = np.ones(gx.size, dtype=bool)
    if net.has_polar:
        ok = np.hypot(pts[:, 0], pts[:, 1]) > 0
    values[ok] = net.encode(pts[ok])
    return Grid(tuple(axes), xs, ys, values.reshape(len(ys), len(xs), net.slow_dim))


@dataclass
class Spectrum:
    eigenvalues: np.ndarray   # (M, D), ascending per row
    summary: dict

    def to_csv(self, path) -> None:
        d = self.eigenvalues.shape[1]
        write_csv(path, ["point"] + [f"lambda{k + 1}" for k in range(d)],
                  [[i, *row] for i, row in enumerate(self.eigenvalues)])


def spectrum_export(ds: Dataset, gap_ratio: float = 100.0, slow_dim: Optional[int] = None) -> Spectrum:
    """Ascending covariance eigenvalues per instance plus a cluster-gap summary."""
    if len(ds) == 0:
        raise ConfigError("spectrum of an empty dataset")
    lam = np.array([sym_eig(c).eigenvalues for c in ds.cov])
    absl = np.abs(lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = absl[:, 1:] / absl[:, :-1]
    ratios = np.where(np.isnan(ratios), 1.0, ratios)
    votes = [slow_dim_at(row, gap_ratio) for row in lam]
    summary = {
        "points": len(ds),
        "max_gap_ratio_median": float(np.median(ratios.max(axis=1))) if lam.shape[1] > 1 else 1.0,
        "slow_dim_votes": {str(k): votes.count(k) for k in sorted(set(votes), key=lambda v: (v is None, v))},
        "gap_ratio_threshold": gap_ratio,
    }
    ds_est = slow_dim if slow_dim is not None else ds.meta.get("slow_dim")
    if ds_est:
        slow_mean = float(np.mean(absl[:, :ds_est]))
        fast_mean = float(np.mean(absl[:, ds_est:]))
        summary.update(slow_dim=int(ds_est), mean_slow_eigenvalue=slow_mean, mean_fast_eigenvalue=fast_mean,
                       cluster_ratio=fast_mean / slow_mean if slow_mean > 0 else math.inf)
    return Spectrum(lam, summary)


def slowobs_diagnostic(sys: SdeSystem, obs: Callable, x, tau: float, j: int, seed: SeedSpec,
                       dt: Optional[float] = None) -> tuple:
    """``(obs spread, fiber spread)`` over ``j`` bursts of horizon ``tau`` from ``x``.

    The first number is the sample standard deviation of ``obs`` at the burst
    endpoints (small for a slow observable), the second the root of the trace
    of the endpoint covariance (the spread of the quasi-stationary fiber law).
    """
    dt = sys.default_dt if dt is None else dt
    steps = int(round(tau / dt))
    ends = simulate_bursts(sys, x, dt, steps, j, seed)
    vals = np.asarray(obs(ends), dtype=float).reshape(j, -1)
    obs_std = float(np.sqrt(np.sum(np.var(vals, axis=0, ddof=1)))) if j > 1 else 0.0
    spread = float(np.sqrt(np.sum(np.var(ends, axis=0, ddof=1)))) if j > 1 else 0.0
    return obs_std, spread


# ---------------------------------------------------------------- file exports

def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")
