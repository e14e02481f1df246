"""Command-line entry point: ``mmlab <subcommand> [--config PATH] [--seed N] [--out DIR] [--scale S]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from .harness import experiments as ex
from .harness.config import SCALES, ConfigError, load_config
from .harness.reports import emit_reports
from .morl_metrics import ObjectivePoint, metrics_table, write_metrics

log = logging.getLogger("mmlab")


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML parameter file")
    p.add_argument("--seed", type=int, help="master seed (default: config value)")
    p.add_argument("--out", help="output directory (default: <out_dir>/<subcommand>)")
    p.add_argument("--scale", choices=sorted(SCALES), help="scale preset applied before the file")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-session progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("train", help="train the configured lineup"))

    p = sub.add_parser("test", help="greedy test sessions with trained policies")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="policy directory written by train (…/policies)")

    p = sub.add_parser("sweep-aiif", help="train+test one RIM agent per AIIF value")
    _common(p)
    p.add_argument("--aiif", type=_floats, help="comma-separated AIIF values")

    p = sub.add_parser("sweep-morl", help="weight sweep producing objective points")
    _common(p)
    p.add_argument("--family", choices=("morl", "rew", "rim"), default="morl")
    p.add_argument("--weights", type=_floats, help="comma-separated weights (AIIF values for rim)")

    _common(sub.add_parser("benchmark-rewards", help="RIM vs Full-Inv vs Asym-Damp vs PnL-only"))

    p = sub.add_parser("context-seq", help="run context-sequence methods over one shared library")
    _common(p)
    p.add_argument("--method", action="append", help="method name, repeatable (default: all)")

    p = sub.add_parser("powdts", help="POW-dTS over a library in the context sequence")
    _common(p)

    p = sub.add_parser("metrics", help="hypervolume, sparsity and undominated counts of point files")
    p.add_argument("points", nargs="+", help="LABEL=points.json pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--margin", type=float, default=0.05)

    p = sub.add_parser("report", help="rolling averages and summaries of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--window", type=int, default=50)
    return parser


DEFAULT_CONTEXT_METHODS = (
    "single-policy:0",
    "cl-singlep",
    "cl-singlep-exp",
    "cl-freezing",
    "cl-freezing-exp",
    "cl-rehearsal",
    "cl-rehearsal-exp",
    "cl-ewc",
    "cl-ewc-exp",
    "powdts",
    "random-blocks",
    "random-timesteps",
    "optimal-mp",
)


def _load(args):
    overrides = {}
    if args.scale:
        overrides["scale"] = args.scale
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    out = args.out or os.path.join(cfg.out_dir, args.command)
    return cfg, out


def _dir_name(method: str) -> str:
    return method.replace(":", "_")


def _run(args) -> int:
    if args.command == "report":
        for path in emit_reports(args.run_dir, args.window):
            print(path)
        return 0
    if args.command == "metrics":
        labeled = {}
        for item in args.points:
            label, _, path = item.partition("=")
            if not path:
                raise ConfigError(f"expected LABEL=path, got {item!r}")
            with open(path) as fh:
                labeled[label] = [ObjectivePoint(**p) for p in json.load(fh)]
        os.makedirs(args.out, exist_ok=True)
        table = metrics_table(labeled, args.margin)
        write_metrics(os.path.join(args.out, "metrics.json"), os.path.join(args.out, "metrics.csv"), table)
        print(json.dumps(table, indent=1, sort_keys=True))
        return 0

    cfg, out = _load(args)
    os.makedirs(out, exist_ok=True)
    if args.command == "train":
        res = ex.run_training(cfg, cfg.seed, out)
        print(json.dumps(res.summary, indent=1, sort_keys=True, default=str))
    elif args.command == "test":
        res = ex.run_test(cfg, args.checkpoint, cfg.seed, out)
        print(json.dumps(res.summary, indent=1, sort_keys=True, default=str))
    elif args.command == "sweep-aiif":
        table = ex.run_aiif_sweep(cfg, args.aiif, out)
        print(json.dumps(table["by_aiif"], indent=1))
    elif args.command == "sweep-morl":
        pts = ex.run_morl_weight_sweep(cfg, args.weights, out, family=args.family)
        for p in pts:
            print(p.tag, p.mtm_score, p.inv_score)
    elif args.command == "benchmark-rewards":
        table = ex.run_reward_benchmark(cfg, out)
        print(json.dumps(table["by_reward"], indent=1))
    elif args.command in ("context-seq", "powdts"):
        methods = ("powdts",) if args.command == "powdts" else (args.method or DEFAULT_CONTEXT_METHODS)
        for m in methods:
            ex.parse_method(m)
        library = ex.pretrain_library(cfg, cfg.seed, os.path.join(out, "library"))
        summaries = {}
        for m in methods:
            res = ex.run_context_sequence(cfg, m, cfg.seed, library, os.path.join(out, _dir_name(m)))
            summaries[m] = res.summary()
            print(f"{m}: mean reward {summaries[m]['mean_reward']:.3f}")
        ex.write_json(os.path.join(out, "context_summary.json"), summaries)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    try:
        return _run(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"mmlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
