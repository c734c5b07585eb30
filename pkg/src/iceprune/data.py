"""Datasets, on-disk formats, and the stratified subsampler used while tuning."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR_RECORD = 1 + 3 * 32 * 32
SYNTH_MAGIC = b"ICED"
_SYNTH_HEADER = struct.Struct("<4sII3I")


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    class_count: int
    split_tag: str = "train"

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")
        if self.split_tag not in ("train", "test"):
            raise ValueError(f"split_tag must be 'train' or 'test', got {self.split_tag!r}")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.y)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.x[indices], self.y[indices], self.class_count, self.split_tag)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.class_count)


@dataclass(frozen=True)
class SubsampleSpec:
    fraction: float = 0.1
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ValueError(f"subsample fraction must be in (0, 1], got {self.fraction}")


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def subsample_indices(d: Dataset, spec: SubsampleSpec) -> np.ndarray:
    """Indices of a seeded random subset of ``d`` of size round(fraction * |d|).

    Stratified mode allocates floor(fraction * n_c) per class and hands the
    leftover samples to the classes with the largest remainders, so each
    class count is within one sample of its exact share.
    """
    n = len(d)
    size = _round_half_up(spec.fraction * n)
    rng = np.random.default_rng(spec.seed)
    if not spec.stratified:
        return rng.permutation(n)[:size]
    if spec.fraction * n < d.class_count:
        raise ValueError(
            f"stratified subsample of {spec.fraction} x {n} samples cannot cover {d.class_count} classes"
        )
    counts = d.class_histogram()
    exact = spec.fraction * counts
    alloc = np.floor(exact).astype(np.int64)
    extra = size - int(alloc.sum())
    if extra > 0:
        # largest remainder first, lower class index on ties
        order = np.lexsort((np.arange(d.class_count), -(exact - alloc)))
        alloc[order[:extra]] += 1
    picked = []
    for c in range(d.class_count):
        members = np.flatnonzero(d.y == c)
        picked.append(members[rng.permutation(len(members))[:alloc[c]]])
    idx = np.concatenate(picked) if picked else np.zeros(0, np.int64)
    return idx[rng.permutation(len(idx))]


def subsample(d: Dataset, spec: SubsampleSpec) -> Dataset:
    return d.take(subsample_indices(d, spec))


def train_test_split(d: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    test_idx = subsample_indices(d, SubsampleSpec(test_fraction, seed))
    keep = np.ones(len(d), bool)
    keep[test_idx] = False
    train = d.take(np.flatnonzero(keep))
    test = d.take(np.sort(test_idx))
    return (Dataset(train.x, train.y, d.class_count, "train"),
            Dataset(test.x, test.y, d.class_count, "test"))


def concat(parts: list[Dataset]) -> Dataset:
    if not parts:
        raise ValueError("nothing to concatenate")
    return Dataset(
        np.concatenate([p.x for p in parts]),
        np.concatenate([p.y for p in parts]),
        max(p.class_count for p in parts),
        parts[0].split_tag,
    )


# -- synthetic generator -----------------------------------------------------

def _templates(class_count, shape, rng, block):
    c, h, w = shape
    coarse = rng.standard_normal((class_count, c, -(-h // block), -(-w // block)))
    full = np.kron(coarse, np.ones((1, 1, block, block)))[:, :, :h, :w]
    return full / np.sqrt((full ** 2).mean(axis=(1, 2, 3), keepdims=True))


def synthetic_splits(class_count=10, train_per_class=500, test_per_class=100,
                     shape=(3, 16, 16), seed=0, noise=1.0, block=4,
                     max_shift=1) -> tuple[Dataset, Dataset]:
    """Class-template images with random gain, translation and Gaussian noise,
    scaled to roughly unit variance.

    Train and test share the class templates (drawn from ``seed``) and
    differ only in the per-sample draws.
    """
    rng = np.random.default_rng(seed)
    templates = _templates(class_count, tuple(shape), rng, block)

    def draw(per_class, tag):
        n = class_count * per_class
        y = np.repeat(np.arange(class_count), per_class)
        gain = 1.0 + 0.25 * rng.standard_normal((n, 1, 1, 1))
        x = templates[y] * gain
        if max_shift:
            shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
            for i, (dy, dx) in enumerate(shifts):
                x[i] = np.roll(x[i], (dy, dx), axis=(1, 2))
        x = (x + noise * rng.standard_normal(x.shape)) / np.sqrt(1.0625 + noise ** 2)
        order = rng.permutation(n)
        return Dataset(x[order].astype(np.float32), y[order], class_count, tag)

    train = draw(train_per_class, "train")
    test = draw(test_per_class, "test")
    return train, test


def make_synthetic(class_count=10, per_class=100, shape=(3, 16, 16), seed=0,
                   noise=1.0, **kw) -> Dataset:
    return synthetic_splits(class_count, per_class, 0, shape, seed, noise, **kw)[0]


# -- file formats ------------------------------------------------------------

def load(path, format: str, split_tag: str = "train") -> Dataset:
    """Read a dataset file; ``format`` is ``"cifar10"`` or ``"synthetic"``."""
    data = Path(path).read_bytes()
    if format == "cifar10":
        return parse_cifar10(data, split_tag)
    if format == "synthetic":
        return parse_synthetic(data, split_tag)
    raise ValueError(f"unknown data format {format!r}")


def parse_cifar10(data: bytes, split_tag: str = "train") -> Dataset:
    if not data:
        raise DataFormatError("empty CIFAR-10 batch (offset 0)")
    whole, rest = divmod(len(data), CIFAR_RECORD)
    if rest:
        raise DataFormatError(
            f"truncated CIFAR-10 record at byte offset {whole * CIFAR_RECORD} "
            f"({rest} of {CIFAR_RECORD} bytes)"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(whole, CIFAR_RECORD)
    y = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(y >= 10)
    if bad.size:
        raise DataFormatError(f"label {y[bad[0]]} out of range at byte offset {bad[0] * CIFAR_RECORD}")
    x = (raw[:, 1:].reshape(whole, 3, 32, 32).astype(np.float32) / 255.0)
    return Dataset(x, y, 10, split_tag)


def write_cifar10(d: Dataset, path) -> None:
    """Inverse of :func:`parse_cifar10` for uint8-representable inputs in [0, 1]."""
    pixels = np.clip(np.rint(d.x.reshape(len(d), -1) * 255), 0, 255).astype(np.uint8)
    Path(path).write_bytes(np.hstack([d.y.astype(np.uint8)[:, None], pixels]).tobytes())


def parse_synthetic(data: bytes, split_tag: str = "train") -> Dataset:
    if len(data) < _SYNTH_HEADER.size:
        raise DataFormatError(
            f"truncated header: {len(data)} of {_SYNTH_HEADER.size} bytes (offset {len(data)})"
        )
    magic, classes, count, c, h, w = _SYNTH_HEADER.unpack_from(data)
    if magic != SYNTH_MAGIC:
        raise DataFormatError(f"bad magic {magic!r} at offset 0, expected {SYNTH_MAGIC!r}")
    payload = c * h * w * 4
    record = 1 + payload
    expected = _SYNTH_HEADER.size + count * record
    if len(data) != expected:
        got = (len(data) - _SYNTH_HEADER.size) // record
        raise DataFormatError(
            f"payload size mismatch: header declares {count} samples, record {got} "
            f"starts at byte offset {_SYNTH_HEADER.size + got * record}, file has {len(data)} bytes"
        )
    dt = np.dtype([("label", "u1"), ("x", "<f4", (c, h, w))])
    rec = np.frombuffer(data, dtype=dt, offset=_SYNTH_HEADER.size, count=count)
    y = rec["label"].astype(np.int64)
    bad = np.flatnonzero(y >= classes)
    if bad.size:
        raise DataFormatError(
            f"label {y[bad[0]]} >= class_count {classes} at byte offset "
            f"{_SYNTH_HEADER.size + bad[0] * record}"
        )
    return Dataset(rec["x"].astype(np.float32), y, classes, split_tag)


def write_synthetic(d: Dataset, path) -> None:
    if d.x.ndim != 4:
        raise ValueError(f"synthetic format stores (C, H, W) samples, got {d.x.shape[1:]}")
    if d.class_count > 256:
        raise ValueError("labels are stored as u8")
    c, h, w = d.shape
    dt = np.dtype([("label", "u1"), ("x", "<f4", (c, h, w))])
    rec = np.empty(len(d), dtype=dt)
    rec["label"] = d.y
    rec["x"] = d.x
    Path(path).write_bytes(_SYNTH_HEADER.pack(SYNTH_MAGIC, d.class_count, len(d), c, h, w) + rec.tobytes())
