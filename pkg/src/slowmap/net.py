"""Fully-connected encoder-decoder networks with hand-written reverse mode.

All trainable parameters live in one flat vector; each dense layer's weight
matrix ``(out, in)`` and bias ``(out,)`` are views into it, followed in the
vector by the next layer.  A parallel mask vector (1 = active, 0 = pruned)
has the same layout.  The code is dtype-agnostic so a network can be cast to
``np.longdouble`` for finite-difference checks.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DivergenceError, DomainError
from .rng import SeedSpec, as_seed

FORMAT_VERSION = 1


# ---------------------------------------------------------------- activations

def elu(v):
    v = np.asarray(v)
    return np.where(v > 0, v, np.expm1(np.minimum(v, 0)))


def elu_prime(v):
    v = np.asarray(v)
    return np.where(v > 0, np.ones_like(v), np.exp(np.minimum(v, 0)))


def _angle(x1, x2):
    theta = np.arctan2(x2, x1)
    return np.where(theta == -np.pi, np.pi, theta)


def polar_forward(x):
    """``(r, theta)`` of a point ``(2,)`` or batch ``(n, 2)``; theta in ``(-pi, pi]``."""
    x = np.asarray(x)
    xb = x.reshape(-1, 2)
    r = np.hypot(xb[:, 0], xb[:, 1])
    if np.any(r == 0):
        raise DomainError("polar layer is undefined at the origin")
    out = np.stack([r, _angle(xb[:, 0], xb[:, 1])], axis=1)
    return out.reshape(x.shape)


def _polar_back(x, g):
    """Pull ``g = dL/d(r, theta)`` back to ``dL/dx``; works on ``(..., 2)``."""
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2
    r = np.sqrt(r2)
    dx1 = g[..., 0] * x[..., 0] / r - g[..., 1] * x[..., 1] / r2
    dx2 = g[..., 0] * x[..., 1] / r + g[..., 1] * x[..., 0] / r2
    return np.stack([dx1, dx2], axis=-1)


# ---------------------------------------------------------------- architecture

@dataclass(frozen=True)
class LayerSpec:
    kind: str            # "dense" or "polar"
    in_dim: int
    out_dim: int
    activation: str = "identity"  # "elu" or "identity"; dense only

    @property
    def n_params(self) -> int:
        return 0 if self.kind == "polar" else self.out_dim * (self.in_dim + 1)


_TOKEN = re.compile(r"^(\d+)$|^\[(\d+)\]$")


def parse_architecture(text: str):
    """Parse ``"2-4-1-4-2"`` or ``"2-[2]-4-4-1-4-4-2"`` into layers and bottleneck index.

    ``[2]`` marks the parameter-free cartesian-to-polar layer.  The bottleneck
    is the unique narrowest interior width; hidden dense layers get ELU, the
    bottleneck and the output layer are linear.
    """
    tokens = [t.strip() for t in str(text).replace(" ", "").split("-") if t.strip()]
    widths, polar_after = [], []
    for tok in tokens:
        m = _TOKEN.match(tok)
        if not m:
            raise ConfigError(f"bad layer token {tok!r} in {text!r}")
        if m.group(2) is not None:
            if not widths or widths[-1] != 2 or int(m.group(2)) != 2:
                raise ConfigError("polar layer [2] must follow a 2-dimensional input")
            polar_after.append(len(widths) - 1)
            continue
        w = int(m.group(1))
        if w < 1:
            raise ConfigError("layer widths must be positive")
        widths.append(w)
    if len(widths) < 3:
        raise ConfigError(f"architecture {text!r} needs input, bottleneck and output widths")
    if any(p != 0 for p in polar_after) or len(polar_after) > 1:
        raise ConfigError("the polar layer may only appear directly after the input")
    interior = widths[1:-1]
    narrow = min(interior)
    if interior.count(narrow) != 1:
        raise ConfigError(f"architecture {text!r} has no unique bottleneck")
    bottleneck_width_pos = 1 + interior.index(narrow)

    layers = []
    if polar_after:
        layers.append(LayerSpec("polar", 2, 2))
    bottleneck_index = None
    for i in range(len(widths) - 1):
        is_output = i == len(widths) - 2
        is_bottleneck = i + 1 == bottleneck_width_pos
        act = "identity" if (is_output or is_bottleneck) else "elu"
        layers.append(LayerSpec("dense", widths[i], widths[i + 1], act))
        if is_bottleneck:
            bottleneck_index = len(layers) - 1
    return layers, bottleneck_index


def architecture_string(layers: Sequence[LayerSpec]) -> str:
    parts = [str(layers[0].in_dim)]
    for spec in layers:
        parts.append("[2]" if spec.kind == "polar" else str(spec.out_dim))
    return "-".join(parts)


# ---------------------------------------------------------------- network

class Network:
    def __init__(self, layers: Sequence[LayerSpec], bottleneck_index: int,
                 params=None, mask=None, dtype=np.float64):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        for spec in self.layers:
            if spec.kind == "polar" and (spec.in_dim, spec.out_dim) != (2, 2):
                raise ConfigError("polar layer must map 2 -> 2")
        if self.layers[-1].kind != "dense" or self.layers[-1].activation != "identity":
            raise ConfigError("output layer must be dense with identity activation")
        if not (0 <= bottleneck_index < len(self.layers)) or self.layers[bottleneck_index].kind != "dense":
            raise ConfigError("bottleneck must index a dense layer")
        self.bottleneck_index = int(bottleneck_index)

        self.offsets = []
        n = 0
        for spec in self.layers:
            self.offsets.append(n)
            n += spec.n_params
        self.n_params = n
        self.params = np.zeros(n, dtype=dtype) if params is None else np.array(params, dtype=dtype)
        self.mask = np.ones(n, dtype=dtype) if mask is None else np.array(mask, dtype=dtype)
        if self.params.shape != (n,) or self.mask.shape != (n,):
            raise ConfigError(f"expected {n} parameters")
        self.W, self.b = self._views(self.params)
        self._grad, self._gW, self._gb = None, None, None

    # views of a flat vector as per-layer (W, b)
    def _views(self, flat):
        ws, bs = [], []
        for spec, off in zip(self.layers, self.offsets):
            if spec.kind == "polar":
                ws.append(None)
                bs.append(None)
                continue
            nw = spec.out_dim * spec.in_dim
            ws.append(flat[off:off + nw].reshape(spec.out_dim, spec.in_dim))
            bs.append(flat[off + nw:off + nw + spec.out_dim])
        return ws, bs

    @classmethod
    def from_architecture(cls, text: str, seed=0, dtype=np.float64) -> "Network":
        """Parse ``text`` and draw Glorot weights from the ``init`` child of ``seed`` (None: zeros)."""
        layers, bidx = parse_architecture(text)
        net = cls(layers, bidx, dtype=dtype)
        if seed is not None:
            net.init_glorot(as_seed(seed).child("init"))
        return net

    def init_glorot(self, seed: SeedSpec) -> None:
        """Weights uniform in ``+-sqrt(6/(fan_in+fan_out))``, biases zero."""
        for i, (spec, w) in enumerate(zip(self.layers, self.W)):
            if w is None:
                continue
            a = math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
            u = seed.child("layer", i).uniform(w.size)
            w[...] = ((2.0 * u - 1.0) * a).reshape(w.shape)
            self.b[i][...] = 0.0
        self.params *= self.mask

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def slow_dim(self) -> int:
        return self.layers[self.bottleneck_index].out_dim

    @property
    def has_polar(self) -> bool:
        return any(s.kind == "polar" for s in self.layers)

    @property
    def architecture(self) -> str:
        return architecture_string(self.layers)

    def copy(self, dtype=None) -> "Network":
        dtype = dtype or self.params.dtype
        return Network(self.layers, self.bottleneck_index, self.params.astype(dtype),
                       self.mask.astype(dtype), dtype=dtype)

    def set_state(self, params, mask) -> None:
        self.params[...] = params
        self.mask[...] = mask

    def apply_mask(self) -> None:
        self.params *= self.mask

    def dense_layer_indices(self):
        return [i for i, s in enumerate(self.layers) if s.kind == "dense"]

    def param_coords(self):
        """``(layer, row, col)`` of every flat parameter; biases sit at ``col = in_dim``."""
        layer = np.empty(self.n_params, dtype=int)
        row = np.empty(self.n_params, dtype=int)
        col = np.empty(self.n_params, dtype=int)
        for i, (spec, off) in enumerate(zip(self.layers, self.offsets)):
            if spec.kind == "polar":
                continue
            nw = spec.out_dim * spec.in_dim
            r, c = np.divmod(np.arange(nw), spec.in_dim)
            layer[off:off + nw + spec.out_dim] = i
            row[off:off + nw] = r
            col[off:off + nw] = c
            row[off + nw:off + nw + spec.out_dim] = np.arange(spec.out_dim)
            col[off + nw:off + nw + spec.out_dim] = spec.in_dim
        return layer, row, col

    def layer_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.layers[i].n_params)

    # ------------------------------------------------------------ evaluation

    def _run(self, x, stop: int):
        """Forward through layers ``0..stop``; returns output and per-layer (input, pre-activation)."""
        a = x
        cache = []
        for i in range(stop + 1):
            spec = self.layers[i]
            if spec.kind == "polar":
                cache.append((a, None))
                a = polar_forward(a)
                continue
            z = a @ self.W[i].T + self.b[i]
            cache.append((a, z))
            a = elu(z) if spec.activation == "elu" else z
        return a, cache

    def _back(self, g, cache, stop: int, grads: bool = True):
        """Reverse sweep from layer ``stop``; ``g`` is dL/d(output of layer stop), shape ``(..., width)``."""
        for i in range(stop, -1, -1):
            spec = self.layers[i]
            a, z = cache[i]
            if spec.kind == "polar":
                g = _polar_back(a, g)
                continue
            if spec.activation == "elu":
                g = g * elu_prime(z)
            if grads:
                self._gW[i][...] = g.T @ a
                self._gb[i][...] = g.sum(axis=0)
            g = g @ self.W[i]
        return g

    def forward(self, x):
        """Network output for one state ``(D,)`` or a batch ``(n, D)``, plus the cache."""
        x = np.asarray(x, dtype=self.params.dtype)
        single = x.ndim == 1
        out, cache = self._run(x[None] if single else x, len(self.layers) - 1)
        return (out[0] if single else out), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def encode(self, x):
        x = np.asarray(x, dtype=self.params.dtype)
        single = x.ndim == 1
        out, _ = self._run(x[None] if single else x, self.bottleneck_index)
        return out[0] if single else out

    def _loss_grad_buffer(self, x, target):
        # gradient lands in a reused buffer; only valid until the next call
        if self._grad is None or self._grad.dtype != self.params.dtype:
            self._grad = np.zeros_like(self.params)
            self._gW, self._gb = self._views(self._grad)
        out, cache = self._run(x, len(self.layers) - 1)
        diff = out - target
        loss = np.mean(diff * diff)
        self._back(2.0 * diff / diff.size, cache, len(self.layers) - 1)
        self._grad *= self.mask
        return loss, self._grad

    def loss_and_grad(self, x, target):
        """MSE loss of a batch and its gradient as a flat vector (masked entries zero)."""
        x = np.asarray(x, dtype=self.params.dtype)
        target = np.asarray(target, dtype=self.params.dtype)
        loss, grad = self._loss_grad_buffer(x, target)
        return loss, grad.copy()

    def input_jacobians(self, x):
        """Encoder Jacobians ``(n, Ds, D)`` at a batch of states; one reverse sweep per output."""
        x = np.asarray(x, dtype=self.params.dtype)
        xb = x.reshape(-1, self.in_dim)
        _, cache = self._run(xb, self.bottleneck_index)
        ds = self.slow_dim
        # sweep all Ds seeds at once: gradients carry a leading output axis
        cache = [(a[None], None if z is None else z[None]) for a, z in cache]
        seed = np.broadcast_to(np.eye(ds, dtype=xb.dtype)[:, None, :], (ds, len(xb), ds))
        g = self._back(seed, cache, self.bottleneck_index, grads=False)
        return np.transpose(g, (1, 0, 2))

    def input_jacobian(self, x):
        x = np.asarray(x, dtype=self.params.dtype)
        if x.ndim != 1:
            raise ConfigError("input_jacobian takes a single state; use input_jacobians for batches")
        return self.input_jacobians(x[None])[0]

    # ------------------------------------------------------------ persistence

    def to_dict(self, meta: Optional[dict] = None) -> dict:
        layers = []
        mask_w, mask_b = self._views(self.mask)
        for spec, w, b, mw, mb in zip(self.layers, self.W, self.b, mask_w, mask_b):
            entry = asdict(spec)
            if spec.kind == "dense":
                entry.update(weights=w.astype(float).tolist(), bias=b.astype(float).tolist(),
                             weight_mask=mw.astype(int).tolist(), bias_mask=mb.astype(int).tolist())
            layers.append(entry)
        return {"format_version": FORMAT_VERSION, "architecture": self.architecture,
                "bottleneck_index": self.bottleneck_index, "layers": layers, "meta": meta or {}}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        if d.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format_version {d.get('format_version')!r}")
        specs = [LayerSpec(e["kind"], int(e["in_dim"]), int(e["out_dim"]), e.get("activation", "identity"))
                 for e in d["layers"]]
        net = cls(specs, int(d["bottleneck_index"]))
        mW, mb = net._views(net.mask)
        for i, e in enumerate(d["layers"]):
            if e["kind"] != "dense":
                continue
            net.W[i][...] = np.array(e["weights"], dtype=float).reshape(net.W[i].shape)
            net.b[i][...] = np.array(e["bias"], dtype=float)
            mW[i][...] = np.array(e["weight_mask"], dtype=float).reshape(mW[i].shape)
            mb[i][...] = np.array(e["bias_mask"], dtype=float)
        return net

    def save(self, path, meta: Optional[dict] = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(meta), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Network":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def loss_mse(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int, dtype=np.float64) -> "AdamState":
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype), 0)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: object = 0   # data-order stream: master seed or SeedSpec record

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")


def adam_step(params, grads, state: AdamState, cfg: TrainConfig, mask=None) -> None:
    """In-place Adam update with bias correction; masked entries stay exactly zero."""
    state.step += 1
    t = state.step
    state.m *= cfg.beta1
    state.m += (1.0 - cfg.beta1) * grads
    state.v *= cfg.beta2
    state.v += (1.0 - cfg.beta2) * grads * grads
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    params -= (cfg.learning_rate / c1) * state.m / (np.sqrt(state.v) / math.sqrt(c2) + cfg.adam_eps)
    if mask is not None:
        params *= mask
        state.m *= mask
        state.v *= mask


# ---------------------------------------------------------------- training

@dataclass
class HookSignal:
    reset_best: bool = False  # forget the best snapshot (e.g. after a prune event)
    stop: bool = False


@dataclass
class TrainState:
    epoch: int
    adam: AdamState
    history: list
    best_val: float
    best_epoch: int


@dataclass
class TrainResult:
    net: Network
    history: list = field(default_factory=list)   # dicts: epoch, train_loss, val_loss
    best_epoch: int = 0
    best_val: float = math.inf

    @property
    def min_val_loss(self) -> float:
        return self.best_val


def _batches(n: int, size: int):
    for lo in range(0, n, size):
        yield lo, min(n, lo + size)


def train(net: Network, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig,
          hooks: Sequence[Callable] = ()) -> TrainResult:
    """Mini-batch Adam on the MSE between ``net(x)`` and ``P(x)``.

    Every epoch is one pass over a fresh permutation of the training set (the
    last short batch is kept).  The returned network is the snapshot with the
    smallest validation loss.  Hooks are called after every epoch as
    ``hook(epoch, net, state)`` with the 1-based count of completed epochs and
    may return a ``HookSignal``.
    """
    x_tr, t_tr = np.asarray(train_ds.x), np.asarray(train_ds.px)
    x_va, t_va = np.asarray(val_ds.x), np.asarray(val_ds.px)
    if x_tr.shape[1:] != (net.in_dim,) or t_tr.shape[1:] != (net.out_dim,):
        raise ConfigError("training data does not match the network dimensions")
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    shuffle = as_seed(cfg.seed).child("shuffle")
    state = TrainState(0, AdamState.zeros(net.n_params, net.params.dtype), [], math.inf, 0)
    best_params, best_mask = net.params.copy(), net.mask.copy()
    masked = not bool(np.all(net.mask == 1))
    n = len(x_tr)

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            perm = shuffle.child("epoch", epoch).permutation(n)
            xs, ts = x_tr[perm], t_tr[perm]
            total = 0.0
            for lo, hi in _batches(n, cfg.batch_size):
                loss, grad = net._loss_grad_buffer(xs[lo:hi], ts[lo:hi])
                total += loss * (hi - lo)
                adam_step(net.params, grad, state.adam, cfg, net.mask if masked else None)
            train_loss = total / n
            val_loss = loss_mse(net(x_va), t_va)
            if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            state.epoch = epoch
            state.history.append({"epoch": epoch, "train_loss": float(train_loss),
                                  "val_loss": float(val_loss)})
            if val_loss < state.best_val:
                state.best_val, state.best_epoch = float(val_loss), epoch
                best_params[...], best_mask[...] = net.params, net.mask

            stop = False
            for hook in hooks:
                sig = hook(epoch, net, state)
                if sig is None:
                    continue
                if sig.reset_best:
                    masked = True
                    state.best_val, state.best_epoch = math.inf, epoch
                    best_params[...], best_mask[...] = net.params, net.mask
                stop = stop or sig.stop
            if stop:
                break

    best = net.copy()
    best.set_state(best_params, best_mask)
    return TrainResult(best, state.history, state.best_epoch, state.best_val)


def make_autoencoder_dataset(ds: Dataset) -> Dataset:
    """Projection-only data: input and label are both ``P(x)``; covariances carried through."""
    return Dataset(ds.px.copy(), ds.px.copy(), ds.cov.copy(), {**ds.meta, "autoencoder": True})
