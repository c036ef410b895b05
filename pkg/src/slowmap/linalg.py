"""Small dense real-matrix kernel.

Matrices are plain 2-D ``float64`` numpy arrays.  The symmetric eigensolver is
a cyclic Jacobi iteration, which is all the covariance matrices here (a few
dozen rows at most) need.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import SlowMapError

MAX_SWEEPS = 100
OFF_TOL = 1e-14
SYM_TOL = 1e-12


class DimensionError(SlowMapError, ValueError):
    pass


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # column k belongs to eigenvalues[k]


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def _off_norm(a: np.ndarray) -> float:
    return float(np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2)))


def _fix_signs(v: np.ndarray) -> None:
    """Make the largest-magnitude entry of every column positive (lowest index on ties)."""
    for k in range(v.shape[1]):
        col = np.abs(v[:, k])
        top = col.max()
        i = int(np.flatnonzero(col >= top * (1.0 - 1e-12))[0])
        if v[i, k] < 0:
            v[:, k] = -v[:, k]


def sym_eig(a) -> EigenDecomposition:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all ``(p, q)`` pairs in row order until the off-diagonal
    Frobenius norm drops below ``1e-14 * ||A||_F`` (at most 100 sweeps).
    Eigenvalues come back ascending; each eigenvector is signed so that its
    largest-magnitude component is positive.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"matrix must be square, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("matrix has non-finite entries")
    scale = np.abs(a).max() if a.size else 0.0
    if np.abs(a - a.T).max(initial=0.0) > SYM_TOL * scale:
        raise DimensionError("matrix is not symmetric")

    a = 0.5 * (a + a.T)
    v = np.eye(n)
    tol = OFF_TOL * frobenius_norm(a)
    for _ in range(MAX_SWEEPS):
        if _off_norm(a) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # A <- J^T A J with J the (p, q) plane rotation
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    _fix_signs(v)
    return EigenDecomposition(w, v)
