"""Command line entry point.

    tfsep gen-data  --out DIR [--config FILE] [--seed N] [--print-config]
    tfsep train     --data DIR --out DIR [--config FILE] [--seed N] [--print-config]
    tfsep evaluate  --checkpoint FILE --data DIR --out DIR [--split NAME]
    tfsep sweep     --grid FILE --data DIR --out DIR [--config FILE] [--seed N]
    tfsep export-templates --checkpoint FILE --out DIR [--data DIR --example ID]

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure
(including training divergence).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..checkpoint import CheckpointError
from ..xdc import export_activations, export_templates, infer_masks
from .config import ConfigError, default_config, load_config, resolve_config
from .data import gen_dataset, load_manifest, prepare_example
from .evaluate import evaluate_run
from .sweep import load_grid, sweep_run
from .train import DivergenceError, load_checkpoint, train_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _effective_config(args) -> dict:
    cfg = load_config(args.config) if args.config else resolve_config(default_config())
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _maybe_print_config(args, cfg) -> bool:
    if getattr(args, "print_config", False):
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return True
    return False


def cmd_gen_data(args) -> int:
    cfg = _effective_config(args)
    if _maybe_print_config(args, cfg):
        return EXIT_OK
    manifest = gen_dataset(cfg, args.out)
    n = len(load_manifest(args.out))
    print(f"wrote {n} examples to {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    if _maybe_print_config(args, cfg):
        return EXIT_OK
    report = train_run(cfg, args.data, args.out)
    best = report.get("best_val_sdr_db")
    if best is None:
        print(f"training done: {report['steps_run']} steps")
    else:
        print(f"training done: {report['steps_run']} steps, "
              f"best val sdr {best:.4g} dB (epoch {report['best_epoch']})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    summary = evaluate_run(args.checkpoint, args.data, args.out, split=args.split)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _effective_config(args)
    if _maybe_print_config(args, cfg):
        return EXIT_OK
    grid = load_grid(args.grid)
    rows = sweep_run(cfg, grid, args.data, args.out)
    print(f"swept {len(rows)} cells; see {args.out}/sweep.csv")
    return EXIT_OK


def cmd_export_templates(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    if meta["model"]["kind"] != "xdc":
        raise ValueError(f"checkpoint holds a {meta['model']['kind']!r} model; "
                         "only the template-mask model has templates to export")
    w_eff = np.maximum(model.net.params["templates"].data, 0.0)
    paths = export_templates(w_eff, args.out)
    print(f"wrote {len(paths)} template dump files to {args.out}")
    if args.data and args.example:
        rows = [r for r in load_manifest(args.data) if r["id"] == args.example]
        if not rows:
            raise ValueError(f"example {args.example!r} not found in {args.data}")
        ex = prepare_example(rows[0], args.data, meta["stft"], epoch=None)
        _, _, h = infer_masks(model.net, ex.x_scaled)
        apaths = export_activations(h, args.out)
        print(f"wrote {len(apaths)} activation grids for {args.example}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfsep",
                                     description="source separation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic sources and a manifest")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--config", help="JSON config file (defaults used if omitted)")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective config and exit")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train/evaluate a grid of config variations")
    p.add_argument("--grid", required=True, help="JSON of {config.path: [values]}")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="base JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-templates", help="dump learned templates as CSV grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset dir, to also export activations")
    p.add_argument("--example", help="example id whose activations to export")
    p.set_defaults(func=cmd_export_templates)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CheckpointError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
