"""Command-line front end: ``adacm train | compare | eval``.

Exit codes: 0 success, 2 configuration/input error, 3 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import nn
from .config import ConfigError, RunConfig, load_config
from .data import FormatError, ManifestError, SpecError
from .experiment import build_split, compare, run_seeds, summarize
from .metrics import export
from .trainer import TrainingDivergence, evaluate

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("adacm")


def _prepare_output(cfg: RunConfig) -> Path:
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(cfg.dump())
    (out / "digest.txt").write_text(cfg.digest + "\n")
    return out


def _report_json(rep, digest: str) -> dict:
    d = rep.to_dict()
    if math.isnan(d["std"]):
        del d["std"]
    d["run_config_digest"] = digest
    return d


def cmd_train(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "mode": args.mode, "out": args.out, "epochs": args.epochs})
    out = _prepare_output(cfg)
    results = run_seeds(cfg)
    for r in results:
        d = out / f"seed_{r.seed}"
        d.mkdir(exist_ok=True)
        export(r.metrics, d / "metrics.csv")
        nn.save_checkpoint(r.params, d / "final.ckpt")
        for epoch, params in sorted(r.checkpoints.items()):
            nn.save_checkpoint(params, d / f"epoch_{epoch}.ckpt")
        print(f"seed {r.seed}: final test accuracy {r.metrics.final_accuracy:.4f}")
    rep = summarize(results)
    (out / "aggregate.json").write_text(json.dumps(_report_json(rep, cfg.digest), indent=2) + "\n")
    std = "" if math.isnan(rep.std) else f" +/- {rep.std:.4f}"
    print(f"{rep.mode}: {rep.mean:.4f}{std} over {len(results)} seed(s) -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "epochs": args.epochs})
    out = _prepare_output(cfg)
    reports, by_mode = compare(cfg)
    for mode, results in by_mode.items():
        for r in results:
            d = out / mode.replace(":", "_") / f"seed_{r.seed}"
            d.mkdir(parents=True, exist_ok=True)
            export(r.metrics, d / "metrics.csv")
    export(reports, out / "compare.csv")
    (out / "compare.json").write_text(
        json.dumps([_report_json(r, cfg.digest) for r in reports], indent=2) + "\n")
    width = max(len(r.mode) for r in reports)
    for r in reports:
        std = "" if math.isnan(r.std) else f" +/- {100 * r.std:.2f}"
        print(f"{r.mode:<{width}}  {100 * r.mean:6.2f}{std}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        params = nn.load_checkpoint(args.checkpoint)
    except OSError as exc:
        print(f"error: cannot read checkpoint: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = load_config(args.config)
    sp = build_split(cfg)
    acc, per_class = evaluate(params, sp.test)
    print(f"accuracy {acc:.17g}")
    for k, v in enumerate(per_class, 1):
        print(f"class {k}: {'n/a' if np.isnan(v) else format(v, '.17g')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adacm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one mode over the configured seeds")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode")
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="ablation table over the configured modes")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--epochs", type=int)
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the config's test split")
    e.add_argument("checkpoint")
    e.add_argument("--config", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError, FormatError, ManifestError, nn.CheckpointError, nn.ShapeError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
