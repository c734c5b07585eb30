"""Structured pruning with gated fine-tuning, layer freezing and a pruning-aware LR cap."""

from .autotune import SearchSpace, TuneResult, default_space, grid_search, objective
from .data import Dataset, SubsampleSpec, subsample, synthetic_splits
from .freezing import FreezeSet, LayerDelta, probe_and_freeze, select_frozen
from .hyper import HyperParams
from .netcore import Network, evaluate, reference_cnn
from .pipeline import (FineTuneConfig, PipelineToggles, RunReport, StepRecord, baseline_pipeline,
                       ice_pipeline, pft, train_model, tune_stage)
from .pruning import (Criterion, PruneAction, PruneSchedule, alpha, param_count, prune_step,
                      uniform_schedule)
from .scheduler import InnerSchedule, LrHyper, epoch_lr, max_lr

__version__ = "0.1.0"

__all__ = [
    "SearchSpace", "TuneResult", "default_space", "grid_search", "objective",
    "Dataset", "SubsampleSpec", "subsample", "synthetic_splits",
    "FreezeSet", "LayerDelta", "probe_and_freeze", "select_frozen",
    "HyperParams",
    "Network", "evaluate", "reference_cnn",
    "FineTuneConfig", "PipelineToggles", "RunReport", "StepRecord", "baseline_pipeline",
    "ice_pipeline", "pft", "train_model", "tune_stage",
    "Criterion", "PruneAction", "PruneSchedule", "alpha", "param_count", "prune_step",
    "uniform_schedule",
    "InnerSchedule", "LrHyper", "epoch_lr", "max_lr",
]
