"""Command line: pretrain, prune, autotune, ablate, compare, report.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from .autotune import write_trials
from .config import ConfigError, ExperimentConfig
from .data import DataFormatError
from .netcore import Network, NonFiniteError, evaluate
from .pipeline import (PipelineAborted, PipelineToggles, baseline_pipeline, ice_pipeline, pft,
                       train_model, tune_stage)
from .pruning import CLI_NAMES
from .reports import (ABLATION_VARIANTS, compare, read_steps, read_summary, report_text,
                      write_ablation, write_comparison, write_run_report)

log = logging.getLogger("iceprune")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RunFailure(RuntimeError):
    pass


def _header(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.hash, "master_seed": cfg.seed}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_pretrain(cfg: ExperimentConfig) -> Path:
    """Train the configured model from scratch and write its checkpoint."""
    train, test = cfg.datasets()
    net = cfg.build_model(train.shape, train.class_count)
    p = cfg.pretrain()
    try:
        losses = train_model(net, train, p["epochs"], p["lr"], p["batch_size"], p["momentum"],
                             p["weight_decay"], cfg.seed, p["schedule"])
    except NonFiniteError as exc:
        raise RunFailure(f"pretraining diverged ({exc}); lr={p['lr']} batch={p['batch_size']}; "
                         f"try a smaller lr") from exc
    train_acc, test_acc = evaluate(net, train), evaluate(net, test)
    log.info("pretrained: train acc %.4f, test acc %.4f", train_acc, test_acc)
    path = cfg.checkpoint_path
    path.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(net, path)
    meta = {"config_hash": cfg.hash, "pretrain_hash": cfg.pretrain_hash, "master_seed": cfg.seed,
            "checkpoint": path.name, "train_accuracy": train_acc, "test_accuracy": test_acc,
            "epoch_losses": losses, "pretrain": p}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def _load_model(cfg: ExperimentConfig, train) -> Network:
    path = cfg.checkpoint_path
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path} (run 'pretrain' first)")
    net = checkpoint.load(path)
    if net.input_shape != train.shape or net.num_classes != train.class_count:
        raise checkpoint.CheckpointError(
            f"checkpoint {path} expects input {net.input_shape} and {net.num_classes} classes, "
            f"data has {train.shape} and {train.class_count}")
    return net


def _inputs(cfg: ExperimentConfig):
    train, test = cfg.datasets()
    net = _load_model(cfg, train)
    return net, cfg.schedule(net), train, test


def _extra(cfg: ExperimentConfig, mode: str) -> dict:
    return {"mode": mode, "checkpoint_sha256": _sha256(cfg.checkpoint_path),
            "pruning_ratio": cfg.raw.get("schedule", {}).get("ratio")}


def cmd_prune(cfg: ExperimentConfig, mode: str | None = None) -> dict[str, Path]:
    """Prune the pretrained model; writes the pruned checkpoint and a run report."""
    mode = mode or cfg.mode
    net, schedule, train, test = _inputs(cfg)
    crit, ft, seed = cfg.criterion(), cfg.finetune(), cfg.seed
    tune = None
    space = cfg.space()
    if mode == "baseline":
        name = "baseline"
        pruned, report = baseline_pipeline(net, schedule, train, test, crit,
                                           cfg.hyper().lr.lr_base, ft, seed)
    elif mode == "ice" and space is not None:
        name = "ice"
        pruned, report, tune = ice_pipeline(net, schedule, space, train, test, cfg.subsample(),
                                            crit, cfg.toggles(), ft, seed)
    else:
        if mode == "ice":
            log.info("no search space configured; running the gated pipeline with fixed hyper")
        name = "pft"
        pruned, report = pft(net, schedule, cfg.hyper(), train, test, crit, cfg.toggles(), ft, seed)
    extra = _extra(cfg, name)
    if tune is not None:
        extra["best_hyper"] = tune.best.flat()
        extra["best_error"] = tune.best_error
    paths = write_run_report(report, cfg.output_dir, name, cfg.hash, seed, extra)
    if tune is not None:
        paths["trials"] = cfg.output_dir / f"{name}_{cfg.hash}.trials.csv"
        write_trials(tune, paths["trials"], _header(cfg))
    paths["checkpoint"] = cfg.output_dir / f"{name}_{cfg.hash}.pruned.icep"
    checkpoint.save(pruned, paths["checkpoint"])
    return paths


def cmd_autotune(cfg: ExperimentConfig) -> dict[str, Path]:
    """Stage-1 grid search only; dumps every trial and the winner."""
    net, schedule, train, test = _inputs(cfg)
    space = cfg.space()
    if space is None:
        raise ConfigError("autotune needs a 'space' block")
    tune, acc_orig = tune_stage(net, schedule, space, train, test, cfg.subsample(),
                                cfg.criterion(), cfg.toggles(), cfg.finetune(), cfg.seed)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    trials = out / f"autotune_{cfg.hash}.trials.csv"
    write_trials(tune, trials, _header(cfg))
    best = out / f"autotune_{cfg.hash}.json"
    best.write_text(json.dumps({**_header(cfg), "best_hyper": tune.best.flat(),
                                "best_error": tune.best_error, "subsample_acc_orig": acc_orig,
                                "points": len(space)}, indent=2, sort_keys=True) + "\n")
    return {"trials": trials, "summary": best}


def cmd_ablate(cfg: ExperimentConfig) -> dict[str, Path]:
    """Full pipeline plus the three leave-one-out variants under one master seed.

    With a search space, Stage 1 runs once with every component on and its
    winner is shared by all four runs; otherwise the fixed hyper are used.
    """
    net, schedule, train, test = _inputs(cfg)
    crit, ft, seed = cfg.criterion(), cfg.finetune(), cfg.seed
    space = cfg.space()
    if space is not None:
        h = tune_stage(net, schedule, space, train, test, cfg.subsample(), crit,
                       PipelineToggles(), ft, seed)[0].best
    else:
        h = cfg.hyper()
    results, paths = {}, {}
    for name, toggles in ABLATION_VARIANTS:
        _, report = pft(net, schedule, h, train, test, crit, PipelineToggles(*toggles), ft, seed)
        results[name] = report
        paths[name] = write_run_report(report, cfg.output_dir, f"ablate-{name}", cfg.hash, seed,
                                       {**_extra(cfg, "ablate"), "hyper_used": h.flat()})["summary"]
    paths["table"] = cfg.output_dir / f"ablation_{cfg.hash}.csv"
    write_ablation(results, paths["table"], _header(cfg))
    return paths


def cmd_compare(report_paths, outdir, stem: str = "comparison") -> dict[str, Path]:
    return write_comparison(compare(report_paths), outdir, stem)


def cmd_report(summary_path) -> str:
    summary_path = Path(summary_path)
    summary = read_summary(summary_path)
    steps_path = summary_path.parent / summary["files"]["steps"]
    if not steps_path.exists():
        raise FileNotFoundError(f"report not found: {steps_path}")
    return report_text(summary, read_steps(steps_path)[1])


# -- argument parsing ---------------------------------------------------------

def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--output-dir", help="override the output directory")
    p.add_argument("--data-format", choices=("cifar10", "synthetic"))
    p.add_argument("--criterion", choices=sorted(CLI_NAMES))
    p.add_argument("--lr-base", type=float)
    p.add_argument("--lr-delta", type=float)
    p.add_argument("--lr-p", type=float)
    p.add_argument("--lr-beta", type=float)
    p.add_argument("--inner-schedule", choices=("constant", "cosine_decay"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iceprune", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    _config_args(sub.add_parser("pretrain", help="train the model and write a checkpoint"))
    p = sub.add_parser("prune", help="prune a pretrained checkpoint and write a run report")
    _config_args(p)
    p.add_argument("--mode", choices=("ice", "baseline", "pft"))
    _config_args(sub.add_parser("autotune", help="hyperparameter search on subsampled data only"))
    _config_args(sub.add_parser("ablate", help="full pipeline and three leave-one-out variants"))
    p = sub.add_parser("compare", help="merge run summaries into a table and scatter data")
    p.add_argument("reports", nargs="+", help="run summary .json files")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--stem", default="comparison")
    p = sub.add_parser("report", help="print a run summary")
    p.add_argument("summary", help="run summary .json file")
    return ap


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "data.format": args.data_format,
        "criterion.kind": args.criterion,
        "hyper.lr_base": args.lr_base,
        "hyper.delta": args.lr_delta,
        "hyper.p": args.lr_p,
        "hyper.beta": args.lr_beta,
        "finetune.inner_schedule": args.inner_schedule,
        "mode": getattr(args, "mode", None),
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            paths = cmd_compare(args.reports, args.out, args.stem)
            print("\n".join(str(p) for p in paths.values()))
            return EXIT_OK
        if args.command == "report":
            print(cmd_report(args.summary))
            return EXIT_OK
        cfg = ExperimentConfig.load(args.config, _overrides(args))
        if args.command == "pretrain":
            print(cmd_pretrain(cfg))
        elif args.command == "prune":
            print("\n".join(str(p) for p in cmd_prune(cfg).values()))
        elif args.command == "autotune":
            print("\n".join(str(p) for p in cmd_autotune(cfg).values()))
        else:
            print("\n".join(str(p) for p in cmd_ablate(cfg).values()))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailure, PipelineAborted, NonFiniteError, checkpoint.CheckpointError, DataFormatError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
