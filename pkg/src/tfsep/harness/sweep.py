"""Grid sweeps over config values: train and evaluate one cell per combination.

The grid maps dotted config paths to value lists, e.g.

    {"model.lam": [0.0, 1e-3, 1e-2], "train.learning_rate": [0.003, 0.01]}

Cells enumerate the cartesian product with keys in sorted order, so cell
numbering is stable for a given grid.  Every cell shares the same dataset.
"""

from __future__ import annotations

import csv
import itertools
import json
from pathlib import Path

from .config import ConfigError, config_hash, resolve_config
from .evaluate import evaluate_run
from .train import CKPT_BEST, train_run


def set_by_path(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"grid key {dotted!r} does not name a config field")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"grid key {dotted!r} does not name a config field")
    node[parts[-1]] = value


def load_grid(path: str | Path) -> dict:
    try:
        grid = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from exc
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid must be a non-empty JSON object of {path: [values]}")
    for key, vals in grid.items():
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"grid entry {key!r} must be a non-empty list")
    return grid


def sweep_run(base_cfg: dict, grid: dict, data_dir: str | Path, out_dir: str | Path,
              log=print) -> list[dict]:
    """One train+evaluate per grid cell; a failing cell is recorded in the
    summary table and the sweep moves on."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid.keys())
    rows = []
    for cell, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        cell_dir = out_dir / f"cell_{cell:03d}"
        log(f"cell {cell}: " + ", ".join(f"{k}={v}" for k, v in zip(keys, combo)))
        row = {"cell": cell, "status": "ok"}
        row.update({k: v for k, v in zip(keys, combo)})
        try:
            cfg = json.loads(json.dumps(base_cfg))  # deep copy via round-trip
            for key, value in zip(keys, combo):
                set_by_path(cfg, key, value)
            cfg = resolve_config(cfg)
            report = train_run(cfg, data_dir, cell_dir, log=log)
            summary = evaluate_run(cell_dir / CKPT_BEST, data_dir, cell_dir,
                                   split="test", log=log)
        except Exception as exc:
            log(f"cell {cell} failed: {exc}")
            row["status"] = "failed"
            row["error"] = str(exc)
        else:
            row["median_improvement_db"] = summary["median_improvement_db"]
            row["median_sdr_db"] = summary["median_sdr_db"]
            row["best_val_sdr_db"] = report.get("best_val_sdr_db")
        rows.append(row)
    _write_sweep_csv(out_dir / "sweep.csv", base_cfg, keys, rows)
    return rows


def _write_sweep_csv(path: Path, base_cfg: dict, keys: list[str], rows: list[dict]) -> None:
    cols = (["cell", "status"] + keys
            + ["median_improvement_db", "median_sdr_db", "best_val_sdr_db", "error"])
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash(base_cfg)} seed={base_cfg.get('seed')}\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in rows:
            vals = []
            for c in cols:
                v = r.get(c)
                if isinstance(v, float):
                    vals.append("%.17g" % v)
                elif v is None:
                    vals.append("")
                else:
                    vals.append(str(v))
            writer.writerow(vals)
