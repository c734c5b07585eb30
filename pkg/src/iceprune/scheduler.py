"""Pruning-aware cap on the fine-tuning learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class LrHyper:
    """lr_base: rate for the unpruned model; delta: largest reduction;
    p: pruned fraction at which half of delta applies; beta: curve shape."""

    lr_base: float = 0.001
    delta: float = 0.0005
    p: float = 0.3
    beta: float = 2.0

    def __post_init__(self):
        if not self.lr_base > 0:
            raise ValueError(f"lr_base must be > 0, got {self.lr_base}")
        if not 0 < self.delta < self.lr_base:
            raise ValueError(f"delta must be in (0, lr_base={self.lr_base}), got {self.delta}")
        if not 0 < self.p <= 0.5:
            raise ValueError(f"p must be in (0, 0.5], got {self.p}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be a positive finite number, got {self.beta}")


@dataclass(frozen=True)
class InnerSchedule:
    kind: str = "constant"
    steps_per_epoch: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "cosine_decay"):
            raise ValueError(f"inner schedule must be 'constant' or 'cosine_decay', got {self.kind!r}")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")


def max_lr(alpha: float, h: LrHyper) -> float:
    """Upper bound on the fine-tuning rate when a fraction ``alpha`` of parameters remains.

    lr_base - delta / (1 + (alpha / (2(1-p) - alpha))**beta). Non-decreasing
    in alpha, equals lr_base - delta at alpha = 0 and lr_base - delta/2 at
    alpha = 1 - p. The single pole (p = 0.5, alpha = 1) takes its limit lr_base.
    """
    alpha = float(alpha)
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    gap = 2 * (1 - h.p) - alpha
    if gap <= 0:
        return h.lr_base
    ratio = alpha / gap
    try:
        powered = ratio ** h.beta
    except OverflowError:
        return h.lr_base
    return h.lr_base - h.delta / (1 + powered)


def epoch_lr(step: int, lr_max: float, s: InnerSchedule) -> float:
    if not 0 <= step < s.steps_per_epoch:
        raise ValueError(f"step {step} outside [0, {s.steps_per_epoch})")
    if s.kind == "constant":
        return lr_max
    return lr_max * (1 + math.cos(math.pi * step / s.steps_per_epoch)) / 2
