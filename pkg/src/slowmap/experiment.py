"""Config-driven experiment runs: simulate, build datasets, train, evaluate, report.

An experiment is one JSON document (see ``DEFAULTS``).  Every run writes the
fully resolved config next to its outputs, and every output that consumes
files records their SHA-256 digests.  All randomness flows from the single
``seed`` through named child streams, so a config plus a seed reproduces every
file byte for byte.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from typing import Optional

import numpy as np

from .dataset import Dataset, DatasetConfig, build_dataset, split
from .errors import ConfigError
from .metrics import (affine_fit, error_stats, level_set_grid, orthogonality_errors,
                      spectrum_export, write_csv, write_json)
from .net import Network, TrainConfig, make_autoencoder_dataset, parse_architecture, train
from .prune import PruneSchedule, prune_hook, sparsity_report, sparsity_table, write_mask_grid_csv
from .rng import SeedSpec
from .sde import simulate_path
from .systems import ObservedPair, get_pair

DEFAULTS = {
    "system": {"name": "sin2d", "params": {}},
    "simulation": {"x0": None, "dt": None, "n_steps": 100000, "integrator": "hidden"},
    "dataset": {"M": 2680, "test_M": 0, "split": 0.7, "tau": None, "c": 5.0, "J": 1000,
                "tau_points": 100, "empirical_cov": False, "cov_J": 100000, "angle_range": None},
    "network": {"layers": "2-4-1-4-2", "polar": False},
    "training": {"epochs": 3000, "batch_size": 16, "learning_rate": 0.003, "beta1": 0.9,
                 "beta2": 0.999, "adam_eps": 1e-8, "autoencoder": False},
    "pruning": None,
    "eval": {"split": "test", "slow_map": True, "grid": None},
    "seed": 0,
}

PRUNE_KEYS = {"start_epoch", "interval_epochs", "fraction_per_event", "target_sparsity",
              "prunable_layers", "post_prune_epochs"}
GRID_KEYS = {"axes", "bounds", "resolution", "fixed"}


# ---------------------------------------------------------------- configuration

def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config field {where!r}")
        if isinstance(base[key], dict) and key != "params" and isinstance(val, dict):
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def set_path(cfg: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted path such as ``dataset.M``."""
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            if k in node and node[k] is None and k in ("pruning",):
                node[k] = {}
            else:
                raise ConfigError(f"unknown config field {dotted!r}")
        node = node[k]
    node[keys[-1]] = value


def resolve_config(path=None, overrides: Optional[dict] = None, sets=()) -> dict:
    """Defaults, then the JSON file, then ``--set key=value`` pairs, then explicit overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = _merge(cfg, user)
    for item in sets:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        set_path(cfg, key.strip(), value)
    for key, val in (overrides or {}).items():
        if val is not None:
            set_path(cfg, key, val)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    _merge(DEFAULTS, {k: v for k, v in cfg.items() if k != "pruning"})
    pr = cfg.get("pruning")
    if pr is not None:
        if not isinstance(pr, dict) or set(pr) - PRUNE_KEYS:
            raise ConfigError(f"pruning must be null or an object with keys {sorted(PRUNE_KEYS)}")
        PruneSchedule(**pr)
    grid = cfg["eval"].get("grid")
    if grid is not None and (not isinstance(grid, dict) or set(grid) - GRID_KEYS):
        raise ConfigError(f"eval.grid must be null or an object with keys {sorted(GRID_KEYS)}")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    ds = cfg["dataset"]
    if ds["M"] < 0 or ds["test_M"] < 0:
        raise ConfigError("dataset sizes must be non-negative")
    if not 0 < ds["split"] < 1:
        raise ConfigError("dataset.split must lie in (0, 1)")
    TrainConfig(**_train_kwargs(cfg))
    parse_architecture(network_architecture(cfg))


def _train_kwargs(cfg: dict) -> dict:
    t = cfg["training"]
    return {k: t[k] for k in ("epochs", "batch_size", "learning_rate", "beta1", "beta2", "adam_eps")}


def streams(cfg: dict) -> dict:
    root = SeedSpec(int(cfg["seed"]))
    return {name: root.child(name) for name in ("path", "data", "test-data", "split", "net", "train")}


def make_pair(cfg: dict) -> ObservedPair:
    return get_pair(cfg["system"]["name"], **cfg["system"].get("params", {}))


def network_architecture(cfg: dict) -> str:
    """Layer string, with the polar layer inserted after the input when ``network.polar`` is set."""
    text = cfg["network"]["layers"].replace(" ", "")
    if cfg["network"]["polar"] and "[2]" not in text:
        head, _, rest = text.partition("-")
        text = f"{head}-[2]-{rest}"
    return text


def dataset_config(cfg: dict, which: str = "data") -> DatasetConfig:
    sim, ds = cfg["simulation"], cfg["dataset"]
    return DatasetConfig(
        m=ds["M"] if which == "data" else ds["test_M"], n_steps=sim["n_steps"], x0=sim["x0"],
        dt=sim["dt"], tau=ds["tau"], c=ds["c"], tau_points=ds["tau_points"], j=ds["J"],
        empirical_cov=ds["empirical_cov"], cov_j=ds["cov_J"], integrator=sim["integrator"],
        angle_range=ds["angle_range"], seed=streams(cfg)[which].to_dict())


# ---------------------------------------------------------------- file helpers

def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_config(cfg: dict, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "config.json"), cfg)


# ---------------------------------------------------------------- commands

def run_simulate(cfg: dict, out: str) -> str:
    pair = make_pair(cfg)
    sim = pair.simulator(cfg["simulation"]["integrator"])
    dt = cfg["simulation"]["dt"] or sim.default_dt
    x0 = cfg["simulation"]["x0"]
    x0 = np.zeros(sim.dim) if x0 is None else np.asarray(x0, dtype=float)
    traj = simulate_path(sim, x0, dt, int(cfg["simulation"]["n_steps"]), streams(cfg)["path"])
    _write_config(cfg, out)
    path = os.path.join(out, "trajectory.csv")
    traj.to_csv(path, sim, {"format_version": 1, "integrator": cfg["simulation"]["integrator"]})
    return path


def run_dataset(cfg: dict, out: str, threads: int = 1) -> dict:
    """Build the dataset, split it and (when ``test_M > 0``) an independent test set."""
    pair = make_pair(cfg)
    _write_config(cfg, out)
    full = build_dataset(pair, dataset_config(cfg, "data"), threads=threads)
    paths = {"dataset": os.path.join(out, "dataset.jsonl")}
    full.save(paths["dataset"])
    if len(full) >= 2:
        tr, va = split(full, cfg["dataset"]["split"], streams(cfg)["split"])
        for name, part in (("train", tr), ("val", va)):
            paths[name] = os.path.join(out, f"{name}.jsonl")
            part.save(paths[name])
    if cfg["dataset"]["test_M"] > 0:
        test = build_dataset(pair, dataset_config(cfg, "test-data"), threads=threads)
        paths["test"] = os.path.join(out, "test.jsonl")
        test.save(paths["test"])
    if len(full):
        spectrum_export(full, slow_dim=pair.slow_dim).to_csv(os.path.join(out, "spectrum.csv"))
    return paths


def _load_split(out: str, name: str) -> Dataset:
    path = os.path.join(out, f"{name}.jsonl")
    if not os.path.exists(path):
        raise ConfigError(f"{path} not found; run the dataset command first")
    return Dataset.load(path)


def run_train(cfg: dict, out: str, data_dir: Optional[str] = None) -> dict:
    """Train on ``data_dir`` (built from ``cfg`` when its splits are missing)."""
    data_dir = data_dir or out
    if not all(os.path.exists(os.path.join(data_dir, f"{n}.jsonl")) for n in ("train", "val")):
        run_dataset(cfg, data_dir)
    tr, va = _load_split(data_dir, "train"), _load_split(data_dir, "val")
    inputs = {n: digest(os.path.join(data_dir, f"{n}.jsonl")) for n in ("train", "val")}
    if cfg["training"]["autoencoder"]:
        tr, va = make_autoencoder_dataset(tr), make_autoencoder_dataset(va)
    _write_config(cfg, out)
    st = streams(cfg)
    net = Network.from_architecture(network_architecture(cfg), seed=st["net"])
    if net.in_dim != tr.dim:
        raise ConfigError(f"network input width {net.in_dim} does not match data dimension {tr.dim}")
    tcfg = TrainConfig(**_train_kwargs(cfg), seed=st["train"])
    hooks = []
    if cfg["pruning"] is not None:
        hooks.append(prune_hook(PruneSchedule(**cfg["pruning"]), tcfg.epochs))
    result = train(net, tr, va, tcfg, hooks=hooks)

    meta = {"config": cfg, "inputs": inputs, "best_epoch": result.best_epoch,
            "min_val_loss": result.best_val, "epochs_run": len(result.history)}
    result.net.save(os.path.join(out, "model.json"), meta)
    write_csv(os.path.join(out, "history.csv"), ["epoch", "train_loss", "val_loss"],
              [[h["epoch"], h["train_loss"], h["val_loss"]] for h in result.history])
    summary = {"layers": result.net.architecture, "max_epochs": tcfg.epochs,
               "epochs_run": len(result.history), "min_val_loss": result.best_val,
               "best_epoch": result.best_epoch, "pruned": cfg["pruning"] is not None,
               "inputs": inputs}
    if cfg["pruning"] is not None:
        rep = sparsity_report(result.net)
        summary["sparsity"] = rep.to_dict()
        summary["prune_events"] = hooks[0].state.events
        write_json(os.path.join(out, "sparsity.json"), rep.to_dict())
        with open(os.path.join(out, "sparsity.txt"), "w") as fh:
            fh.write(sparsity_table([(os.path.basename(os.path.normpath(out)), rep)]))
        write_mask_grid_csv(result.net, os.path.join(out, "mask_grid.csv"))
    write_json(os.path.join(out, "train_summary.json"), summary)
    return summary


def run_eval(cfg: dict, out: str, model_path: Optional[str] = None, data_path: Optional[str] = None,
             slow_map: Optional[bool] = None, grid: bool = False) -> dict:
    model_path = model_path or os.path.join(out, "model.json")
    if data_path is None:
        name = cfg["eval"]["split"]
        data_path = os.path.join(out, f"{name}.jsonl")
        if not os.path.exists(data_path):
            data_path = os.path.join(out, "val.jsonl")
    for p in (model_path, data_path):
        if not os.path.exists(p):
            raise ConfigError(f"{p} not found")
    net = Network.load(model_path)
    ds = Dataset.load(data_path)
    if len(ds) == 0:
        raise ConfigError(f"{data_path} holds no instances")
    df = ds.dim - net.slow_dim
    e_norm = orthogonality_errors(net, ds.x, ds.cov, df, normalize=True)
    e_raw = orthogonality_errors(net, ds.x, ds.cov, df, normalize=False)
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "ortho_errors.csv"), ["index", "error", "error_raw"],
              [[i, a, b] for i, (a, b) in enumerate(zip(e_norm, e_raw))])
    metrics = {"inputs": {"model": digest(model_path), "dataset": digest(data_path)},
               "points": len(ds), "ortho_error": error_stats(e_norm).to_dict(),
               "ortho_error_raw": error_stats(e_raw).to_dict(),
               "recon_mse": float(np.mean((net(ds.x) - ds.px) ** 2))}
    use_slow = cfg["eval"]["slow_map"] if slow_map is None else slow_map
    if use_slow:
        pair = make_pair(cfg)
        metrics["affine_fit"] = affine_fit(net.encode(ds.x), pair.slow_map(ds.x)).to_dict()
    grid_cfg = cfg["eval"]["grid"]
    if grid or grid_cfg is not None:
        g = dict(grid_cfg or {})
        axes = tuple(g.get("axes", (0, 1)))
        bounds = g.get("bounds") or [[float(ds.x[:, a].min()), float(ds.x[:, a].max())] for a in axes]
        fixed = g.get("fixed")
        if fixed is None and ds.dim > 2:
            fixed = ds.x.mean(axis=0).tolist()
        level_set_grid(net, bounds, g.get("resolution", 50), axes, fixed).to_csv(
            os.path.join(out, "grid.csv"))
    write_json(os.path.join(out, "metrics.json"), metrics)
    return metrics


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def run_report(root: str) -> dict:
    """Collect ``train_summary.json`` files below ``root`` into table-shaped summaries."""
    runs = []
    for dirpath, _, files in sorted(os.walk(root)):
        if "train_summary.json" in files:
            runs.append(dirpath)
    if not runs:
        raise ConfigError(f"no runs found under {root}")
    rows, sparsity_rows = [], []
    for d in sorted(runs):
        name = os.path.relpath(d, root)
        s = _load_json(os.path.join(d, "train_summary.json"))
        row = {"run": name, "layers": s["layers"], "max_epochs": s["max_epochs"],
               "min_val_loss": s["min_val_loss"]}
        mpath = os.path.join(d, "metrics.json")
        if os.path.exists(mpath):
            m = _load_json(mpath)
            row["ortho_median"] = m["ortho_error"]["median"]
            if "affine_fit" in m:
                row["r2"] = m["affine_fit"]["r2"]
        rows.append(row)
        if "sparsity" in s:
            sp = s["sparsity"]
            sparsity_rows.append({"run": name, "per_layer": sp["per_layer"], "total": sp["total"],
                                  "dead_inputs": sp["dead_inputs"]})

    lines = [f"{'Model':<16}{'Layer sizes':^40}{'Max. epochs':>12}{'Min. val loss':>15}"]
    for r in rows:
        lines.append(f"{r['run']:<16}{' - '.join(r['layers'].split('-')):^40}"
                     f"{r['max_epochs']:>12d}{r['min_val_loss']:>15.4f}")
    if sparsity_rows:
        lines += ["", f"{'Model':<16}{'Sparsity per layer [%]':^40}{'Total [%]':>12}"]
        for r in sparsity_rows:
            per = " - ".join(str(round(100 * p)) for p in r["per_layer"])
            lines.append(f"{r['run']:<16}{per:^40}{round(100 * r['total']):>12d}")
    text = "\n".join(lines) + "\n"
    report = {"runs": rows, "sparsity": sparsity_rows, "text": text}
    write_json(os.path.join(root, "report.json"), report)
    with open(os.path.join(root, "report.txt"), "w") as fh:
        fh.write(text)
    return report
