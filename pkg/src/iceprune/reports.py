"""Run-report files and cross-run aggregation.

A run writes four files sharing the stem ``<name>_<config_hash>``:

* ``.steps.csv``   one row per pruning step, deterministic given the seeds
* ``.timing.csv``  wall-clock seconds per step (varies run to run)
* ``.freeze.csv``  per-layer weight-change scores from the freeze probe
* ``.json``        summary: accuracies, total time, hyperparameters, toggles

CSV files start with ``# key=value`` lines carrying the config hash and
master seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

from .pipeline import RunReport

STEP_COLUMNS = ("step", "layer_index", "alpha", "acc_before_ft", "triggered", "fine_tuned",
                "probe", "lr_max_used", "acc_after")
FREEZE_COLUMNS = ("layer_index", "l1_change", "init_l2", "score", "frozen")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header: dict, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_csv(path: Path) -> tuple[dict, list[dict]]:
    header, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition("=")
                header[k] = v
            else:
                lines.append(line)
    return header, list(csv.DictReader(lines))


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def write_run_report(report: RunReport, outdir, name: str, cfg_hash: str, master_seed: int,
                     extra: dict | None = None) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = f"{name}_{cfg_hash}"
    header = {"config_hash": cfg_hash, "master_seed": master_seed, "pipeline": name}
    paths = {
        "steps": outdir / f"{stem}.steps.csv",
        "timing": outdir / f"{stem}.timing.csv",
        "freeze": outdir / f"{stem}.freeze.csv",
        "summary": outdir / f"{stem}.json",
    }
    _write_csv(paths["steps"], header, STEP_COLUMNS,
               [[getattr(r, c) for c in STEP_COLUMNS] for r in report.records])
    _write_csv(paths["timing"], header, ("step", "step_seconds"),
               [[r.step, r.step_seconds] for r in report.records])
    frozen = set(report.frozen_layers)
    _write_csv(paths["freeze"], header, FREEZE_COLUMNS,
               [[d.layer_index, d.l1_change, d.init_l2, d.score, d.layer_index in frozen]
                for d in report.layer_deltas])
    summary = {
        "config_hash": cfg_hash,
        "master_seed": master_seed,
        "pipeline": name,
        "final_accuracy": report.final_accuracy,
        "acc_orig": report.acc_orig,
        "total_seconds": report.total_seconds,
        "step_seconds": [r.step_seconds for r in report.records],
        "fine_tunes": report.fine_tune_count,
        "steps": len(report.records),
        "final_alpha": report.records[-1].alpha if report.records else 1.0,
        "frozen_layers": report.frozen_layers,
        "completed": report.completed,
        "error": report.error,
        "run_config": report.config,
        "files": {k: p.name for k, p in paths.items() if k != "summary"},
        **(extra or {}),
    }
    paths["summary"].write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
    return paths


def read_summary(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"report not found: {path}")
    return json.loads(path.read_text())


def read_steps(path) -> tuple[dict, list[dict]]:
    header, rows = _read_csv(Path(path))
    out = []
    for row in rows:
        out.append({
            "step": int(row["step"]),
            "layer_index": int(row["layer_index"]),
            "alpha": float(row["alpha"]),
            "acc_before_ft": float(row["acc_before_ft"]),
            "triggered": row["triggered"] == "1",
            "fine_tuned": row["fine_tuned"] == "1",
            "probe": row["probe"] == "1",
            "lr_max_used": float(row["lr_max_used"]) if row["lr_max_used"] else None,
            "acc_after": float(row["acc_after"]),
        })
    return header, out


def read_freeze(path) -> tuple[dict, list[dict]]:
    header, rows = _read_csv(Path(path))
    return header, [
        {"layer_index": int(r["layer_index"]), "l1_change": float(r["l1_change"]),
         "init_l2": float(r["init_l2"]), "score": float(r["score"]), "frozen": r["frozen"] == "1"}
        for r in rows
    ]


# -- aggregation -------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    pipeline: str
    pruning_ratio: float
    final_accuracy: float
    total_seconds: float
    speedup: float | None
    config_hash: str
    source: str


def compare(paths) -> list[ComparisonRow]:
    """Merge run summaries; speedup is baseline seconds over each run's seconds."""
    paths = [Path(p) for p in paths]
    if len(paths) < 2:
        raise ValueError("compare needs at least two reports")
    summaries = [read_summary(p) for p in paths]
    hashes = {s["config_hash"] for s in summaries}
    if len(hashes) > 1:
        warnings.warn(f"comparing reports from different configs: {sorted(hashes)}")
    base = next((s for s in summaries if s["pipeline"] == "baseline"), None)
    rows = []
    for s, p in zip(summaries, paths):
        speedup = base["total_seconds"] / s["total_seconds"] if base is not None else None
        rows.append(ComparisonRow(s["pipeline"], s.get("pruning_ratio", 1 - s["final_alpha"]),
                                  s["final_accuracy"], s["total_seconds"], speedup,
                                  s["config_hash"], p.name))
    return rows


def write_comparison(rows: list[ComparisonRow], outdir, stem: str = "comparison") -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    table = outdir / f"{stem}.csv"
    scatter = outdir / f"{stem}.scatter.csv"
    cols = ("pipeline", "pruning_ratio", "final_accuracy", "total_seconds", "speedup",
            "config_hash", "source")
    _write_csv(table, {}, cols, [[getattr(r, c) for c in cols] for r in rows])
    _write_csv(scatter, {}, ("label", "seconds", "accuracy"),
               [[r.pipeline, r.total_seconds, r.final_accuracy] for r in rows])
    return {"table": table, "scatter": scatter}


ABLATION_VARIANTS = (
    ("full", (True, True, True)),
    ("no_threshold", (False, True, True)),
    ("no_freezing", (True, False, True)),
    ("no_scheduler", (True, True, False)),
)


def write_ablation(results: dict[str, RunReport], path, header: dict) -> None:
    rows = []
    for name, (thr, frz, sch) in ABLATION_VARIANTS:
        r = results[name]
        rows.append([name, thr, frz, sch, r.final_accuracy, r.total_seconds, r.fine_tune_count,
                     r.triggered_count])
    _write_csv(Path(path), header,
               ("variant", "threshold", "freezing", "scheduler", "accuracy", "time_seconds",
                "fine_tunes", "triggered"), rows)


def report_text(summary: dict, steps: list[dict]) -> str:
    lines = [
        f"pipeline {summary['pipeline']}  config {summary['config_hash']}  seed {summary['master_seed']}",
        f"accuracy {summary['acc_orig']:.4f} -> {summary['final_accuracy']:.4f}   "
        f"time {summary['total_seconds']:.2f}s   fine-tunes {summary['fine_tunes']}/{summary['steps']}",
        f"{'step':>4} {'layer':>5} {'alpha':>7} {'acc_pre':>8} {'gate':>4} {'ft':>3} {'lr_max':>10} {'acc_post':>8}",
    ]
    for s in steps:
        lr = f"{s['lr_max_used']:.3e}" if s["lr_max_used"] is not None else "-"
        lines.append(f"{s['step']:>4} {s['layer_index']:>5} {s['alpha']:>7.4f} {s['acc_before_ft']:>8.4f} "
                     f"{'y' if s['triggered'] else 'n':>4} {'y' if s['fine_tuned'] else 'n':>3} "
                     f"{lr:>10} {s['acc_after']:>8.4f}")
    return "\n".join(lines)


def run_report_dict(report: RunReport) -> dict:
    return {"records": [asdict(r) for r in report.records], "total_seconds": report.total_seconds,
            "final_accuracy": report.final_accuracy}
