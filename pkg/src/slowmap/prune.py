"""Iterative global magnitude pruning and sparsity reporting."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .net import HookSignal, Network


class ScheduleError(ConfigError):
    pass


@dataclass
class PruneSchedule:
    start_epoch: int = 100
    interval_epochs: int = 50
    fraction_per_event: float = 0.04
    target_sparsity: float = 0.3        # fraction of all network parameters
    prunable_layers: Optional[list] = None  # None: every dense layer except bottleneck and output
    post_prune_epochs: Optional[int] = None  # None: a quarter of the maximum epochs

    def __post_init__(self):
        if not 0 < self.fraction_per_event < 1:
            raise ScheduleError("fraction_per_event must lie in (0, 1)")
        if not 0 < self.target_sparsity < 1:
            raise ScheduleError("target_sparsity must lie in (0, 1)")
        if self.start_epoch < 0 or self.interval_epochs < 1:
            raise ScheduleError("need start_epoch >= 0 and interval_epochs >= 1")

    def layers_for(self, net: Network) -> list:
        excluded = {net.bottleneck_index, len(net.layers) - 1}
        dense = net.dense_layer_indices()
        if self.prunable_layers is None:
            return [i for i in dense if i not in excluded]
        chosen = sorted(set(int(i) for i in self.prunable_layers))
        bad = [i for i in chosen if i not in dense or i in excluded]
        if bad:
            raise ScheduleError(f"layers {bad} cannot be pruned (not dense, bottleneck or output)")
        return chosen

    def to_dict(self) -> dict:
        return asdict(self)


def _pool(net: Network, layers) -> np.ndarray:
    idx = [np.arange(net.layer_slice(i).start, net.layer_slice(i).stop) for i in layers]
    if not idx or sum(len(i) for i in idx) == 0:
        raise ScheduleError("prunable pool is empty")
    return np.concatenate(idx)


def target_count(net: Network, sched: PruneSchedule) -> int:
    """Number of pool parameters that must be masked to reach the target total sparsity."""
    pool = _pool(net, sched.layers_for(net))
    need = math.ceil(round(sched.target_sparsity * net.n_params, 9))
    if need > len(pool):
        raise ScheduleError(f"target sparsity {sched.target_sparsity} needs {need} masked parameters "
                            f"but only {len(pool)} are prunable")
    return need


def global_l1_prune(net: Network, sched: PruneSchedule) -> np.ndarray:
    """One pruning event; returns the flat indices newly masked.

    The pooled, still-active weights and biases of the prunable layers are
    ranked by ``|value|`` with ties broken by ``(layer, row, column)``, bias at
    column ``in_dim``.  After ``k`` events the pool holds
    ``round(P * (1 - (1 - f)^k))`` masked entries (capped at the target), so
    the cumulative count never drifts from the schedule.
    """
    layers = sched.layers_for(net)
    pool = _pool(net, layers)
    size = len(pool)
    cap = target_count(net, sched)
    masked = int(np.sum(net.mask[pool] == 0))
    if masked >= cap:
        raise ScheduleError("target sparsity already reached")
    keep = 1.0 - sched.fraction_per_event
    k = 1
    while round(size * (1.0 - keep ** k)) <= masked:
        k += 1
    goal = min(round(size * (1.0 - keep ** k)), cap)

    active = pool[net.mask[pool] != 0]
    layer, row, col = net.param_coords()
    order = np.lexsort((col[active], row[active], layer[active], np.abs(net.params[active])))
    chosen = active[order[:goal - masked]]
    net.mask[chosen] = 0
    net.params[chosen] = 0
    return np.sort(chosen)


@dataclass
class PruneState:
    max_epochs: int
    events: list = field(default_factory=list)  # (epoch, n_masked_in_pool)
    target_epoch: Optional[int] = None


def prune_hook(sched: PruneSchedule, max_epochs: int):
    """Training hook that prunes on schedule and stops ``post_prune_epochs`` after the target.

    Each prune event also resets the best-validation snapshot, so the model
    returned by training carries the final mask.
    """
    post = sched.post_prune_epochs
    if post is None:
        post = max_epochs // 4
    state = PruneState(max_epochs)
    cap = None

    def hook(epoch, net, train_state):
        nonlocal cap
        if cap is None:
            cap = target_count(net, sched)
        if state.target_epoch is not None:
            return HookSignal(stop=epoch >= state.target_epoch + post)
        if epoch < sched.start_epoch or (epoch - sched.start_epoch) % sched.interval_epochs:
            return None
        global_l1_prune(net, sched)
        n_masked = int(np.sum(net.mask == 0))
        state.events.append((epoch, n_masked))
        if n_masked >= cap:
            state.target_epoch = epoch
        return HookSignal(reset_best=True, stop=state.target_epoch is not None and post == 0)

    hook.state = state
    return hook


# ---------------------------------------------------------------- reporting

def dead_inputs(net: Network) -> list:
    """Input coordinates whose every first-layer weight is masked (0-based)."""
    dense = net.dense_layer_indices()
    if not dense:
        raise ConfigError("network has no dense layer")
    first = dense[0]
    if any(s.kind == "polar" for s in net.layers[:first]):
        # inputs reach the first dense layer only through the polar map
        mw = net._views(net.mask)[0][first]
        return [0, 1] if np.all(mw == 0) else []
    mw = net._views(net.mask)[0][first]
    return [int(d) for d in np.flatnonzero(np.all(mw == 0, axis=0))]


@dataclass
class SparsityReport:
    per_layer: list        # fraction masked per dense layer, in layer order
    layer_indices: list
    total: float           # masked / all parameters
    masked: int
    n_params: int
    dead_inputs: list

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table_row(self, name: str = "") -> str:
        per = " - ".join(f"{round(100 * p):d}" for p in self.per_layer)
        return f"{name:<10}{per:^40}{round(100 * self.total):>8d}"

    def most_pruned_layer(self, among=None) -> int:
        among = self.layer_indices if among is None else among
        pos = {li: p for li, p in zip(self.layer_indices, self.per_layer)}
        return max(among, key=lambda li: (pos[li], -li))


def sparsity_report(net: Network) -> SparsityReport:
    per, idx = [], []
    for i in net.dense_layer_indices():
        m = net.mask[net.layer_slice(i)]
        per.append(float(np.mean(m == 0)) if m.size else 0.0)
        idx.append(i)
    masked = int(np.sum(net.mask == 0))
    return SparsityReport(per, idx, masked / net.n_params if net.n_params else 0.0, masked,
                          net.n_params, dead_inputs(net))


def sparsity_table(rows) -> str:
    """Text table of ``(name, SparsityReport)`` pairs: per-layer and total sparsity in percent."""
    lines = [f"{'Model':<10}{'Sparsity per layer [%]':^40}{'Total [%]':>8}"]
    lines += [rep.table_row(name) for name, rep in rows]
    return "\n".join(lines) + "\n"


def first_layer_mask_grid(net: Network) -> np.ndarray:
    """0/1 grid of first dense layer weights (rows: units, columns: inputs); 1 = active."""
    first = net.dense_layer_indices()[0]
    return net._views(net.mask)[0][first].astype(int)


def write_mask_grid_csv(net: Network, path) -> None:
    grid = first_layer_mask_grid(net)
    with open(path, "w") as fh:
        fh.write(",".join(["unit"] + [f"x{d + 1}" for d in range(grid.shape[1])]) + "\n")
        for u, row in enumerate(grid):
            fh.write(",".join([str(u)] + [str(v) for v in row]) + "\n")
