"""Hidden slow-fast systems, their observation maps and ground-truth slow maps."""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError
from .sde import LatentChart, SdeSystem

Array = np.ndarray


def _batched(fn):
    """Let a batched ``(n, D) -> (n, ...)`` map also take a single state."""
    def wrapper(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return fn(x[None])[0]
        return fn(x)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@dataclass(frozen=True)
class ObservedPair:
    name: str
    hidden: SdeSystem
    observed: SdeSystem
    obs_map: Callable[[Array], Array]        # (y, z) -> x
    obs_inverse: Callable[[Array], Array]    # x -> (y, z)
    obs_jacobian: Callable[[Array], Array]   # d f / d(y, z) evaluated at (y, z)
    slow_map: Callable[[Array], Array]       # x -> y, shape (n, Ds)
    params: dict

    def simulator(self, integrator: str = "hidden") -> SdeSystem:
        """System used for path and burst simulation.

        ``"hidden"`` integrates the hidden slow-fast system and maps states
        through the observation function; ``"observed"`` applies Euler-Maruyama
        to the observed drift and dispersion directly.
        """
        if integrator == "hidden":
            return replace(self.observed, chart=LatentChart(self.hidden, self.obs_map, self.obs_inverse))
        if integrator == "observed":
            if self.observed.drift is None:
                raise ConfigError(f"{self.name}: observed drift not available, use the hidden integrator")
            return self.observed
        raise ConfigError(f"unknown integrator {integrator!r}")

    @property
    def slow_dim(self) -> int:
        return self.hidden.slow_dim

    @property
    def fast_dim(self) -> int:
        return self.hidden.fast_dim


def pushforward_covariance(pair: ObservedPair, x) -> Array:
    """``J_f sigma_hidden J_f^T`` evaluated at ``f^{-1}(x)``; accepts one state or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    h = pair.obs_inverse(xb)
    jac = pair.obs_jacobian(h)
    nu = pair.hidden.dispersion(h)
    jn = jac @ nu
    out = jn @ np.swapaxes(jn, 1, 2)
    return out[0] if single else out


# ---------------------------------------------------------------- sin2d

def make_sin2d(eps: float = 1e-3) -> ObservedPair:
    if not eps > 0:
        raise ConfigError("eps must be positive")
    rs = 1.0 / np.sqrt(eps)

    def hid_drift(h):
        y, z = h[:, 0], h[:, 1]
        return np.column_stack([np.sin(z), (np.sin(y) - z) / eps])

    def hid_disp(h):
        out = np.zeros((len(h), 2, 2))
        out[:, 0, 0] = np.sqrt(1.0 + 0.5 * np.sin(h[:, 1]))
        out[:, 1, 1] = rs
        return out

    def obs_drift(x):
        x1, x2 = x[:, 0], x[:, 1]
        s2, c2 = np.sin(x2), np.cos(x2)
        fast = (np.sin(x1 - s2) - x2) / eps
        return np.column_stack([s2 + c2 * fast - s2 / (2.0 * eps), fast])

    def obs_disp(x):
        x2 = x[:, 1]
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = np.sqrt(1.0 + 0.5 * np.sin(x2))
        out[:, 0, 1] = np.cos(x2) * rs
        out[:, 1, 1] = rs
        return out

    def hid_noise(h, dw):
        return np.column_stack([np.sqrt(1.0 + 0.5 * np.sin(h[:, 1])) * dw[:, 0], rs * dw[:, 1]])

    def obs_noise(x, dw):
        x2 = x[:, 1]
        return np.column_stack([np.sqrt(1.0 + 0.5 * np.sin(x2)) * dw[:, 0] + np.cos(x2) * rs * dw[:, 1],
                                rs * dw[:, 1]])

    @_batched
    def f(h):
        return np.column_stack([h[:, 0] + np.sin(h[:, 1]), h[:, 1]])

    @_batched
    def f_inv(x):
        return np.column_stack([x[:, 0] - np.sin(x[:, 1]), x[:, 1]])

    @_batched
    def jac(h):
        out = np.zeros((len(h), 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 0, 1] = np.cos(h[:, 1])
        out[:, 1, 1] = 1.0
        return out

    @_batched
    def slow(x):
        return (x[:, 0] - np.sin(x[:, 1]))[:, None]

    hidden = SdeSystem("sin2d-hidden", 2, 2, eps, hid_drift, hid_disp, 1, 1, noise=hid_noise)
    observed = SdeSystem("sin2d", 2, 2, eps, obs_drift, obs_disp, 1, 1, noise=obs_noise)
    return ObservedPair("sin2d", hidden, observed, f, f_inv, jac, slow, {"eps": eps})


# ---------------------------------------------------------------- half-moons

def _angle(x1, x2):
    theta = np.arctan2(x2, x1)
    return np.where(theta == -np.pi, np.pi, theta)


def make_halfmoons(a1: float = 1e-3, a2: float = 1e-3, a3: float = 2.5e-2,
                   a4: float = 2.5e-2) -> ObservedPair:
    """Oscillating half-moons.

    The observed drift is never written out: paths are integrated in the
    hidden coordinates and mapped through ``f``, and the observed dispersion is
    the Jacobian pushforward of the hidden one.  The fast relaxation time
    ``1/a3`` plays the role of ``eps``.
    """
    if not a3 > 0:
        raise ConfigError("a3 must be positive")
    eps = 1.0 / a3

    def hid_drift(h):
        return np.column_stack([np.full(len(h), a1), a3 * (1.0 - h[:, 1])])

    def hid_disp(h):
        out = np.zeros((len(h), 2, 2))
        out[:, 0, 0] = a2
        out[:, 1, 1] = a4
        return out

    @_batched
    def f(h):
        y, z = h[:, 0], h[:, 1]
        phi = y + z - 1.0
        return np.column_stack([z * np.cos(phi), z * np.sin(phi)])

    def _polar(x):
        r = np.hypot(x[:, 0], x[:, 1])
        if np.any(r == 0.0):
            raise DomainError("angle undefined at the origin")
        return r, _angle(x[:, 0], x[:, 1])

    @_batched
    def f_inv(x):
        r, theta = _polar(x)
        return np.column_stack([theta - r + 1.0, r])

    @_batched
    def jac(h):
        y, z = h[:, 0], h[:, 1]
        phi = y + z - 1.0
        c, s = np.cos(phi), np.sin(phi)
        out = np.empty((len(h), 2, 2))
        out[:, 0, 0] = -z * s
        out[:, 0, 1] = c - z * s
        out[:, 1, 0] = z * c
        out[:, 1, 1] = s + z * c
        return out

    def hid_noise(h, dw):
        return dw * np.array([a2, a4])

    def obs_disp(x):
        h = f_inv(x)
        return jac(h) @ hid_disp(h)

    @_batched
    def slow(x):
        r, theta = _polar(x)
        return (theta + 1.0 - r)[:, None]

    hidden = SdeSystem("halfmoons-hidden", 2, 2, eps, hid_drift, hid_disp, 1, 1, noise=hid_noise)
    observed = SdeSystem("halfmoons", 2, 2, eps, None, obs_disp, 1, 1,
                         chart=LatentChart(hidden, f, f_inv))
    params = {"a1": a1, "a2": a2, "a3": a3, "a4": a4}
    return ObservedPair("halfmoons", hidden, observed, f, f_inv, jac, slow, params)


# ---------------------------------------------------------------- quadratic family

def make_quad(ds: int, df: int, eps: float = 1e-3) -> ObservedPair:
    """``x^d = y^d + (z^d)^2`` for the first ``ds`` coordinates, ``x^{ds+d} = z^d``."""
    if ds < 1 or df < 1:
        raise ConfigError("need at least one slow and one fast coordinate")
    if ds > df:
        raise ConfigError(f"quadratic family requires Ds <= Df, got Ds={ds}, Df={df}")
    if not eps > 0:
        raise ConfigError("eps must be positive")
    d = ds + df
    rs = 1.0 / np.sqrt(eps)
    slow_idx = np.arange(ds)
    pair_idx = ds + slow_idx  # fast coordinate squared into slow coordinate d
    fast_idx = np.arange(ds, d)

    def hid_drift(h):
        out = np.empty_like(h)
        out[:, :ds] = 1.0
        out[:, ds:] = -h[:, ds:] / eps
        return out

    diag = np.concatenate([np.ones(ds), np.full(df, rs)])

    def hid_disp(h):
        return np.broadcast_to(np.diag(diag), (len(h), d, d)).copy()

    def obs_drift(x):
        out = np.empty_like(x)
        out[:, :ds] = (1.0 + eps - 2.0 * x[:, pair_idx] ** 2) / eps
        out[:, ds:] = -x[:, ds:] / eps
        return out

    def obs_disp(x):
        out = np.zeros((len(x), d, d))
        out[:, slow_idx, slow_idx] = 1.0
        out[:, slow_idx, pair_idx] = 2.0 * rs * x[:, pair_idx]
        out[:, fast_idx, fast_idx] = rs
        return out

    def hid_noise(h, dw):
        return dw * diag

    def obs_noise(x, dw):
        out = dw * diag
        out[:, :ds] += 2.0 * rs * x[:, pair_idx] * dw[:, pair_idx]
        return out

    @_batched
    def f(h):
        x = h.copy()
        x[:, :ds] += h[:, pair_idx] ** 2
        return x

    @_batched
    def f_inv(x):
        h = x.copy()
        h[:, :ds] -= x[:, pair_idx] ** 2
        return h

    @_batched
    def jac(h):
        out = np.broadcast_to(np.eye(d), (len(h), d, d)).copy()
        out[:, slow_idx, pair_idx] = 2.0 * h[:, pair_idx]
        return out

    @_batched
    def slow(x):
        return x[:, :ds] - x[:, pair_idx] ** 2

    name = f"quad{ds}s{df}f"
    hidden = SdeSystem(name + "-hidden", d, d, eps, hid_drift, hid_disp, ds, df, noise=hid_noise)
    observed = SdeSystem(name, d, d, eps, obs_drift, obs_disp, ds, df, noise=obs_noise)
    return ObservedPair(name, hidden, observed, f, f_inv, jac, slow,
                        {"ds": ds, "df": df, "eps": eps})


_QUAD = re.compile(r"^quad(\d+)s(\d+)f?$")


def get_pair(name: str, **params) -> ObservedPair:
    """Registry lookup: ``sin2d``, ``halfmoons`` or ``quadNsM`` (N slow, M fast coordinates)."""
    params = {k: v for k, v in params.items() if v is not None}
    if name == "sin2d":
        return make_sin2d(**{k: params[k] for k in ("eps",) if k in params})
    if name == "halfmoons":
        return make_halfmoons(**{k: params[k] for k in ("a1", "a2", "a3", "a4") if k in params})
    m = _QUAD.match(name)
    if m:
        return make_quad(int(m.group(1)), int(m.group(2)),
                         **{k: params[k] for k in ("eps",) if k in params})
    raise ConfigError(f"unknown system {name!r}")
