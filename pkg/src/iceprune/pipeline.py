"""Pruning/fine-tuning pipelines: the gated operator, the two-stage tuner, and the baseline."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autotune import SearchSpace, TuneResult, grid_search
from .data import Dataset, SubsampleSpec, subsample
from .freezing import LayerDelta, probe_and_freeze
from .hyper import HyperParams
from .netcore import Network, NonFiniteError, OptimizerState, evaluate, steps_per_epoch, train_epoch
from .pruning import Criterion, PruneSchedule, alpha, param_count, prune_step
from .scheduler import InnerSchedule, LrHyper, epoch_lr, max_lr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineToggles:
    use_threshold: bool = True
    use_freezing: bool = True
    use_scheduler: bool = True

    @classmethod
    def baseline(cls) -> "PipelineToggles":
        return cls(False, False, False)


@dataclass(frozen=True)
class FineTuneConfig:
    batch_size: int = 128
    epochs: int = 1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    inner_schedule: str = "constant"
    final_extra_epochs: int = 0
    eval_batch_size: int = 1000

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.final_extra_epochs < 0:
            raise ValueError("batch_size and epochs must be >= 1, final_extra_epochs >= 0")
        InnerSchedule(self.inner_schedule)


@dataclass
class StepRecord:
    step: int
    layer_index: int
    alpha: float
    acc_before_ft: float
    triggered: bool       # gate verdict: always True with the gate disabled
    fine_tuned: bool      # an epoch actually ran (gate fired, or freeze probe)
    probe: bool
    lr_max_used: float | None
    acc_after: float
    step_seconds: float


@dataclass
class RunReport:
    records: list[StepRecord]
    total_seconds: float
    final_accuracy: float
    acc_orig: float
    frozen_layers: list[int] = field(default_factory=list)
    layer_deltas: list[LayerDelta] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    completed: bool = True
    error: str | None = None

    @property
    def fine_tune_count(self) -> int:
        return sum(r.fine_tuned for r in self.records)

    @property
    def triggered_count(self) -> int:
        return sum(r.triggered for r in self.records)


class PipelineAborted(RuntimeError):
    def __init__(self, message: str, report: RunReport):
        super().__init__(message)
        self.report = report


def gate(acc_orig: float, acc_now: float, theta: float) -> bool:
    """Fine-tune when the drop from the original accuracy reaches ``theta``."""
    return acc_orig - acc_now >= theta


def fine_tune(net: Network, train: Dataset, state: OptimizerState, lr_max: float,
              cfg: FineTuneConfig, rng: np.random.Generator, epochs: int | None = None) -> None:
    inner = InnerSchedule(cfg.inner_schedule, steps_per_epoch(len(train), cfg.batch_size))
    for _ in range(cfg.epochs if epochs is None else epochs):
        train_epoch(net, train.x, train.y, state, lambda s: epoch_lr(s, lr_max, inner),
                    cfg.batch_size, rng)


def pft(net: Network, schedule: PruneSchedule, h: HyperParams, train: Dataset, test: Dataset,
        criterion: Criterion = Criterion(), toggles: PipelineToggles = PipelineToggles(),
        ft: FineTuneConfig = FineTuneConfig(), seed: int = 0) -> tuple[Network, RunReport]:
    """Prune step by step, fine-tuning only when accuracy has dropped by ``theta``.

    The input network is not modified; a pruned copy is returned. With
    freezing on, step 1 always fine-tunes and doubles as the probe that
    picks the frozen layers. ``train`` drives fine-tuning and calibration,
    ``test`` drives every accuracy check.
    """
    schedule.validate(net)
    work = net.copy()
    config = {
        "hyper": h.flat(), "toggles": asdict(toggles), "finetune": asdict(ft),
        "criterion": asdict(criterion), "seed": seed, "steps": len(schedule),
    }
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    state = OptimizerState(ft.momentum, ft.weight_decay)
    original = param_count(work)
    acc_orig = evaluate(work, test, ft.eval_batch_size)
    records: list[StepRecord] = []
    frozen: list[int] = []
    deltas: list[LayerDelta] = []

    def report(completed=True, error=None, final=None):
        return RunReport(records, time.perf_counter() - start,
                         final if final is not None else (records[-1].acc_after if records else acc_orig),
                         acc_orig, frozen, deltas, config, completed, error)

    lr_max = h.lr.lr_base
    for step, action in enumerate(schedule, 1):
        t_step = time.perf_counter()
        prune_step(work, action, criterion, train)
        acc_before = evaluate(work, test, ft.eval_batch_size)
        a = alpha(work, original)
        triggered = gate(acc_orig, acc_before, h.theta) if toggles.use_threshold else True
        probe = toggles.use_freezing and step == 1
        lr_used = None
        acc_after = acc_before
        if triggered or probe:
            lr_max = max_lr(a, h.lr) if toggles.use_scheduler else h.lr.lr_base
            lr_used = lr_max

            def run(n, lr=lr_max):
                fine_tune(n, train, state, lr, ft, rng)

            try:
                if probe:
                    fs, deltas = probe_and_freeze(work, h.eta, run)
                    frozen = sorted(fs.frozen_layer_indices)
                else:
                    run(work)
            except NonFiniteError as exc:
                records.append(StepRecord(step, action.layer_index, float(a), acc_before, triggered,
                                          True, probe, lr_used, math.nan,
                                          time.perf_counter() - t_step))
                raise PipelineAborted(f"fine-tuning diverged at step {step}: {exc}",
                                      report(False, str(exc), math.nan)) from exc
            acc_after = evaluate(work, test, ft.eval_batch_size)
        records.append(StepRecord(step, action.layer_index, float(a), acc_before, triggered,
                                  lr_used is not None, probe, lr_used, acc_after,
                                  time.perf_counter() - t_step))
        log.debug("step %d layer %d alpha=%.4f acc %.4f -> %.4f ft=%s", step, action.layer_index,
                  float(a), acc_before, acc_after, lr_used is not None)

    final = None
    if ft.final_extra_epochs:
        try:
            fine_tune(work, train, state, lr_max, ft, rng, epochs=ft.final_extra_epochs)
        except NonFiniteError as exc:
            raise PipelineAborted(f"final fine-tuning diverged: {exc}",
                                  report(False, str(exc), math.nan)) from exc
        final = evaluate(work, test, ft.eval_batch_size)
    return work, report(final=final)


def baseline_pipeline(net: Network, schedule: PruneSchedule, train: Dataset, test: Dataset,
                      criterion: Criterion = Criterion(), lr_base: float = 0.001,
                      ft: FineTuneConfig = FineTuneConfig(), seed: int = 0) -> tuple[Network, RunReport]:
    """Fine-tune one epoch at constant ``lr_base`` after every pruning step."""
    h = baseline_hyper(lr_base)
    ft = FineTuneConfig(**{**asdict(ft), "inner_schedule": "constant"})
    return pft(net, schedule, h, train, test, criterion, PipelineToggles.baseline(), ft, seed)


def baseline_hyper(lr_base: float = 0.001) -> HyperParams:
    # delta/p/beta are inert with the scheduler off
    return HyperParams(-math.inf, 0.0, LrHyper(lr_base, lr_base / 2, 0.5, 1.0))


def point_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def tune_stage(net: Network, schedule: PruneSchedule, space: SearchSpace, train: Dataset,
               test: Dataset, spec: SubsampleSpec = SubsampleSpec(),
               criterion: Criterion = Criterion(), toggles: PipelineToggles = PipelineToggles(),
               ft: FineTuneConfig = FineTuneConfig(), seed: int = 0) -> tuple[TuneResult, float]:
    """Grid-search the hyperparameters with the gated pipeline on subsampled data.

    Every point starts from the untouched input model with its own seed.
    Returns the search result and the subsampled original accuracy.
    """
    if len(space) == 0:
        raise ValueError("empty search space")
    sub_train = subsample(train, spec)
    sub_test = subsample(test, spec)
    acc_orig = evaluate(net, sub_test, ft.eval_batch_size)
    counter = iter(range(len(space)))

    def evaluate_point(lam: HyperParams):
        k = next(counter)
        _, rep = pft(net, schedule, lam, sub_train, sub_test, criterion, toggles, ft, point_seed(seed, k))
        return rep.total_seconds, acc_orig - rep.final_accuracy

    return grid_search(space, evaluate_point), acc_orig


def ice_pipeline(net: Network, schedule: PruneSchedule, space: SearchSpace, train: Dataset,
                 test: Dataset, spec: SubsampleSpec = SubsampleSpec(),
                 criterion: Criterion = Criterion(), toggles: PipelineToggles = PipelineToggles(),
                 ft: FineTuneConfig = FineTuneConfig(),
                 seed: int = 0) -> tuple[Network, RunReport, TuneResult]:
    """Tune on subsampled data, then rerun the gated pipeline on the full data with the winner."""
    t1 = time.perf_counter()
    tune, acc_orig = tune_stage(net, schedule, space, train, test, spec, criterion, toggles, ft, seed)
    stage1 = time.perf_counter() - t1
    log.info("stage 1: %d points in %.2fs, best e=%.6f %s", len(space), stage1, tune.best_error,
             tune.best.flat())
    pruned, report = pft(net, schedule, tune.best, train, test, criterion, toggles, ft, seed)
    report.config["stage1_seconds"] = stage1
    report.config["stage1_acc_orig"] = acc_orig
    return pruned, report, tune


def train_model(net: Network, train: Dataset, epochs: int, lr: float, batch_size: int = 64,
                momentum: float = 0.9, weight_decay: float = 1e-4, seed: int = 0,
                schedule: str = "cosine_decay") -> list[float]:
    """Plain SGD training in place; returns the mean loss of every epoch."""
    rng = np.random.default_rng(seed)
    state = OptimizerState(momentum, weight_decay)
    spe = steps_per_epoch(len(train), batch_size)
    total = epochs * spe
    losses = []
    for e in range(epochs):
        if schedule == "cosine_decay":
            lr_at = lambda s, e=e: lr * (1 + math.cos(math.pi * (e * spe + s) / total)) / 2 + 1e-12
        else:
            lr_at = lambda s: lr
        losses.append(train_epoch(net, train.x, train.y, state, lr_at, batch_size, rng))
    return losses
