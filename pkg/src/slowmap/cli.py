"""Command-line driver: ``slowmap {simulate,dataset,train,eval,report}``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 degenerate spectrum or encoder.
"""
from __future__ import annotations

import argparse
import sys

from . import experiment
from .errors import SlowMapError


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="run", help="output directory (default: %(default)s)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for dataset generation")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set dataset.M=500 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowmap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one observed trajectory to CSV")
    _common(p)

    p = sub.add_parser("dataset", help="build (x, P(x), sigma(x)) datasets and the train/val split")
    _common(p)

    p = sub.add_parser("train", help="train the encoder-decoder network")
    _common(p)
    p.add_argument("--data", help="directory holding train.jsonl and val.jsonl (default: --out)")

    p = sub.add_parser("eval", help="orthogonality error, affine fit and level-set grid")
    _common(p)
    p.add_argument("--model", help="checkpoint (default: OUT/model.json)")
    p.add_argument("--dataset", help="dataset file (default: OUT/test.jsonl or OUT/val.jsonl)")
    p.add_argument("--slow-map", dest="slow_map", action="store_true", default=None,
                   help="include the affine fit against the ground-truth slow map")
    p.add_argument("--no-slow-map", dest="slow_map", action="store_false")
    p.add_argument("--grid", action="store_true", help="export encoder level sets to grid.csv")

    p = sub.add_parser("report", help="summarise every run below a directory")
    p.add_argument("root", nargs="?", help="directory to scan (default: --out)")
    p.add_argument("--out", default="run")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        text = experiment.run_report(args.root or args.out)["text"]
        sys.stdout.write(text)
        return 0
    if args.threads < 1:
        raise experiment.ConfigError("--threads must be at least 1")
    cfg = experiment.resolve_config(args.config, {"seed": args.seed}, args.set)
    if args.command == "simulate":
        print(experiment.run_simulate(cfg, args.out))
    elif args.command == "dataset":
        for name, path in experiment.run_dataset(cfg, args.out, threads=args.threads).items():
            print(f"{name}: {path}")
    elif args.command == "train":
        s = experiment.run_train(cfg, args.out, args.data)
        print(f"min validation loss {s['min_val_loss']:.6g} at epoch {s['best_epoch']}")
    elif args.command == "eval":
        m = experiment.run_eval(cfg, args.out, args.model, args.dataset, args.slow_map, args.grid)
        line = f"ortho error median {m['ortho_error']['median']:.4g}"
        if "affine_fit" in m:
            line += f", affine R^2 {m['affine_fit']['r2']:.4f}"
        print(line)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except SlowMapError as exc:
        print(f"slowmap: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
