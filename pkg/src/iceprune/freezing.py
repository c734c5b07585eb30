"""Freeze the layers whose weights move least during a tracked fine-tune."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .netcore import Network


@dataclass(frozen=True)
class LayerDelta:
    layer_index: int
    l1_change: float
    init_l2: float
    score: float


@dataclass(frozen=True)
class FreezeSet:
    frozen_layer_indices: frozenset[int]
    eta: float


def check_eta(eta: float) -> None:
    if not 0 <= eta < 1:
        raise ValueError(f"eta must be in [0, 1), got {eta}")


def weight_snapshot(net: Network) -> dict[int, np.ndarray]:
    return {i: net.layers[i].params["weight"].copy() for i in net.parameterized_indices}


def layer_scores(before: dict[int, np.ndarray], after: Network) -> list[LayerDelta]:
    """||W_after - W_before||_1 / ||W_before||_2 per parameterized layer, weights only."""
    out = []
    for i in after.parameterized_indices:
        w0 = before[i].astype(np.float64)
        w1 = after.layers[i].params["weight"].astype(np.float64)
        if w0.shape != w1.shape:
            raise ValueError(f"layer {i}: snapshot shape {w0.shape} != {w1.shape}")
        l1 = float(np.abs(w1 - w0).sum())
        l2 = float(np.sqrt((w0 ** 2).sum()))
        if l2 == 0:
            warnings.warn(f"layer {i} has zero initial weight norm; it will not be frozen")
            score = math.inf
        else:
            score = l1 / l2
        out.append(LayerDelta(i, l1, l2, score))
    return out


def select_frozen(deltas: list[LayerDelta], eta: float) -> FreezeSet:
    """The floor(eta * L) lowest-scoring layers; equal scores go to the lower index."""
    check_eta(eta)
    k = math.floor(eta * len(deltas))
    ranked = sorted(deltas, key=lambda d: (d.score, d.layer_index))
    return FreezeSet(frozenset(d.layer_index for d in ranked[:k]), eta)


def apply_freeze(net: Network, fs: FreezeSet) -> None:
    for i in fs.frozen_layer_indices:
        net.layers[i].frozen = True


def probe_and_freeze(net: Network, eta: float,
                     fine_tune: Callable[[Network], None]) -> tuple[FreezeSet, list[LayerDelta]]:
    """Run ``fine_tune`` on the (already pruned) network while tracking weight
    movement, then freeze the least-moving layers. The probe's updates are kept."""
    check_eta(eta)
    before = weight_snapshot(net)
    fine_tune(net)
    deltas = layer_scores(before, net)
    fs = select_frozen(deltas, eta)
    apply_freeze(net, fs)
    return fs, deltas
