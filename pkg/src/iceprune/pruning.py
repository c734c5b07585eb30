"""Structure scoring, mask updates, and parameter accounting.

Scores follow one convention for every criterion: lower means pruned
earlier, and already-masked structures score ``-inf`` so they stay pruned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .netcore import Network, ReLU

CRITERIA = ("l1_norm", "random", "entropy", "mean_activation")
CLI_NAMES = {"l1": "l1_norm", "random": "random", "entropy": "entropy", "mean_act": "mean_activation"}


@dataclass(frozen=True)
class Criterion:
    kind: str = "l1_norm"
    rng_seed: int = 0
    calib_batch_size: int = 128
    histogram_bins: int = 32

    def __post_init__(self):
        if self.kind not in CRITERIA:
            raise ValueError(f"unknown criterion {self.kind!r}; choose from {CRITERIA}")
        if self.histogram_bins < 2:
            raise ValueError("histogram_bins must be >= 2")
        if self.calib_batch_size < 1:
            raise ValueError("calib_batch_size must be >= 1")

    @property
    def needs_data(self) -> bool:
        return self.kind in ("entropy", "mean_activation")


@dataclass(frozen=True)
class PruneAction:
    layer_index: int
    target_ratio: float


@dataclass(frozen=True)
class PruneSchedule:
    actions: tuple[PruneAction, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValueError("a pruning schedule needs at least one step")

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def validate(self, net: Network, allow_repeats: bool = False) -> None:
        seen = set()
        for a in self.actions:
            if a.layer_index not in net.masks:
                raise ValueError(f"layer {a.layer_index} is not prunable")
            if not 0 <= a.target_ratio < 1:
                raise ValueError(f"target ratio must be in [0, 1), got {a.target_ratio}")
            if a.layer_index in seen and not allow_repeats:
                raise ValueError(f"layer {a.layer_index} appears twice in the schedule")
            seen.add(a.layer_index)


def uniform_schedule(net: Network, ratio: float, steps: int | None = None) -> PruneSchedule:
    """One step per prunable layer, front to back, all at ``ratio``."""
    layers = net.prunable_indices
    if steps is not None:
        if steps > len(layers):
            raise ValueError(f"{steps} steps requested but the network has {len(layers)} prunable layers")
        layers = layers[:steps]
    return PruneSchedule(tuple(PruneAction(i, ratio) for i in layers))


def read_schedule(path) -> PruneSchedule:
    actions = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            idx, ratio = line.split(",")
            actions.append(PruneAction(int(idx), float(ratio)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: expected 'layer_index,ratio', got {line!r}") from exc
    return PruneSchedule(tuple(actions))


def write_schedule(schedule: PruneSchedule, path) -> None:
    Path(path).write_text("".join(f"{a.layer_index},{a.target_ratio!r}\n" for a in schedule))


# -- scoring -----------------------------------------------------------------

def layer_activation(net: Network, x: np.ndarray, layer_index: int) -> np.ndarray:
    """Output of ``layer_index`` on ``x``, passed through the following ReLU if there is one."""
    out = net.forward(x, upto=layer_index)
    nxt = layer_index + 1
    if nxt < len(net.layers) and isinstance(net.layers[nxt], ReLU):
        out = np.maximum(out, 0)
    return out


def pooled_activation(net: Network, x: np.ndarray, layer_index: int) -> np.ndarray:
    """(samples, structures) activations, global-average-pooled over space for convs."""
    act = layer_activation(net, x, layer_index).astype(np.float64)
    return act.reshape(act.shape[0], act.shape[1], -1).mean(axis=2)


def histogram_entropy(values: np.ndarray, bins: int) -> float:
    """Shannon entropy (nats) of a histogram over [min, max]; constant input gives 0."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return 0.0
    counts, _ = np.histogram(values, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def score_structures(net: Network, layer_index: int, c: Criterion, calib=None) -> np.ndarray:
    if layer_index not in net.masks:
        raise ValueError(f"layer {layer_index} is not prunable")
    n = net.layers[layer_index].out_structures
    if c.kind == "l1_norm":
        w = net.effective_params(layer_index)["weight"].astype(np.float64)
        scores = np.abs(w).reshape(n, -1).sum(axis=1)
    elif c.kind == "random":
        scores = np.random.default_rng([c.rng_seed, layer_index]).random(n)
    else:
        if calib is None or len(calib) == 0:
            raise ValueError(f"criterion {c.kind!r} needs calibration data")
        x = calib.x[:c.calib_batch_size]
        pooled = pooled_activation(net, x, layer_index)
        if c.kind == "mean_activation":
            scores = pooled.mean(axis=0)
        else:
            scores = np.array([histogram_entropy(pooled[:, j], c.histogram_bins) for j in range(n)])
    scores = np.asarray(scores, dtype=np.float64)
    scores[~net.masks[layer_index]] = -np.inf
    return scores


def prune_count(target_ratio: float, structures: int) -> int:
    # tolerance keeps e.g. (2/3) * 3 from flooring to 1
    return int(math.floor(target_ratio * structures + 1e-9))


def apply_prune(net: Network, a: PruneAction, scores: np.ndarray) -> np.ndarray:
    """Mask the lowest-scored structures until floor(ratio * n) are pruned.

    Ties go to the lower index. Masks only ever turn off. Returns the
    indices newly masked by this call.
    """
    if not 0 <= a.target_ratio < 1:
        raise ValueError(f"target ratio must be in [0, 1), got {a.target_ratio}")
    mask = net.masks[a.layer_index]
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != mask.shape:
        raise ValueError(f"{scores.size} scores for {mask.size} structures")
    scores = np.where(mask, scores, -np.inf)
    k = prune_count(a.target_ratio, mask.size)
    order = np.argsort(scores, kind="stable")
    chosen = order[:k]
    newly = chosen[mask[chosen]]
    mask[newly] = False
    return np.sort(newly)


def prune_step(net: Network, a: PruneAction, c: Criterion, calib=None) -> np.ndarray:
    return apply_prune(net, a, score_structures(net, a.layer_index, c, calib))


# -- accounting --------------------------------------------------------------

def param_count(net: Network) -> int:
    """Retained parameters: unmasked weights and biases, input-channel removal included."""
    structs = net.structure_masks()
    total = 0
    for i in net.parameterized_indices:
        masks = net.param_masks(i, structs)
        for name, arr in net.layers[i].params.items():
            m = masks[name]
            total += arr.size if m is None else int(np.count_nonzero(m))
    return total


def total_param_count(net: Network) -> int:
    return sum(arr.size for _, _, arr in net.parameters())


def alpha(net: Network, original_count: int) -> Fraction:
    """Retained-parameter proportion as an exact fraction."""
    if original_count <= 0:
        raise ValueError("original_count must be positive")
    return Fraction(param_count(net), original_count)
