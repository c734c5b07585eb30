"""Experiment configuration: a JSON file checked against ``CONFIG_SCHEMA`` before any compute.

Relative paths inside the file resolve against the file's own directory.
Keys (all optional except ``data``)::

    seed            master seed for every run (int, default 0)
    output_dir      where checkpoints and reports go (default "runs")
    checkpoint      pretrained model path (default <output_dir>/pretrained_<hash>.icep)
    mode            "ice" | "baseline" | "pft" for the prune command (default "ice")
    data            {"format": "cifar10"|"synthetic",
                     "train": [paths], "test": [paths], "train_limit": n, "test_limit": n}
                    or {"format": "synthetic", "generate": {classes, train_per_class,
                     test_per_class, shape, noise, seed}}
    model           {"preset": "reference", "widths": [c1, c2, d1, d2]} or
                    {"layers": [{"kind": "conv2d", "out": 8, "kernel": 3}, {"kind": "relu"},
                     {"kind": "maxpool2d", "size": 2}, {"kind": "flatten"},
                     {"kind": "dense", "out": "classes", "prunable": false}, ...]}
                    plus "init_seed"
    pretrain        {epochs, lr, batch_size, momentum, weight_decay, schedule}
    schedule        {"ratio": r, "steps": n} (uniform, front to back) or {"path": file}
    criterion       {"kind": "l1"|"random"|"entropy"|"mean_act", seed, calib_batch_size,
                     histogram_bins}
    toggles         {"threshold": bool, "freezing": bool, "scheduler": bool}
    hyper           {theta, eta, lr_base, delta, p, beta}   fixed values for pft and ablate
    space           {"axes": {name: [values]}} or {"path": file} or "default"
    subsample       {fraction, seed, stratified}
    finetune        {batch_size, epochs, momentum, weight_decay, inner_schedule,
                     final_extra_epochs, eval_batch_size}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import data as dataio
from .autotune import SearchSpace, default_space, read_space
from .data import Dataset, SubsampleSpec
from .hyper import HYPER_NAMES, HyperParams
from .netcore import Conv2d, Dense, Flatten, MaxPool2d, Network, ReLU, reference_cnn
from .pipeline import FineTuneConfig, PipelineToggles
from .pruning import CLI_NAMES, Criterion, PruneSchedule, read_schedule, uniform_schedule


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_bool = {"type": "boolean"}
_paths = {"type": "array", "items": {"type": "string"}, "minItems": 1}

_LAYER = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["conv2d", "dense", "relu", "maxpool2d", "flatten"]},
        "out": {"oneOf": [_pos_int, {"const": "classes"}]},
        "kernel": _pos_int,
        "padding": {"type": "integer", "minimum": 0},
        "size": _pos_int,
        "prunable": _bool,
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["data"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "checkpoint": {"type": "string"},
        "mode": {"enum": ["ice", "baseline", "pft"]},
        "data": {
            "type": "object",
            "required": ["format"],
            "additionalProperties": False,
            "properties": {
                "format": {"enum": ["cifar10", "synthetic"]},
                "train": _paths,
                "test": _paths,
                "train_limit": _pos_int,
                "test_limit": _pos_int,
                "generate": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "classes": {"type": "integer", "minimum": 2, "maximum": 256},
                        "train_per_class": _pos_int,
                        "test_per_class": _pos_int,
                        "shape": {"type": "array", "items": _pos_int, "minItems": 3, "maxItems": 3},
                        "noise": {"type": "number", "minimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
            },
            "oneOf": [{"required": ["train", "test"]}, {"required": ["generate"]}],
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"const": "reference"},
                "widths": {"type": "array", "items": _pos_int, "minItems": 4, "maxItems": 4},
                "layers": {"type": "array", "items": _LAYER, "minItems": 1},
                "init_seed": {"type": "integer", "minimum": 0},
            },
            "not": {"required": ["preset", "layers"]},
        },
        "pretrain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _pos_int, "lr": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": _pos_int, "momentum": _num, "weight_decay": _num,
                "schedule": {"enum": ["constant", "cosine_decay"]},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ratio": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "steps": _pos_int,
                "path": {"type": "string"},
            },
            "oneOf": [{"required": ["ratio"]}, {"required": ["path"]}],
        },
        "criterion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": sorted(CLI_NAMES)},
                "seed": {"type": "integer", "minimum": 0},
                "calib_batch_size": _pos_int,
                "histogram_bins": {"type": "integer", "minimum": 2},
            },
        },
        "toggles": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"threshold": _bool, "freezing": _bool, "scheduler": _bool},
        },
        "hyper": {
            "type": "object",
            "additionalProperties": False,
            "properties": {n: _num for n in HYPER_NAMES},
        },
        "space": {
            "oneOf": [
                {"const": "default"},
                {"type": "object", "additionalProperties": False, "required": ["path"],
                 "properties": {"path": {"type": "string"}}},
                {"type": "object", "additionalProperties": False, "required": ["axes"],
                 "properties": {"axes": {
                     "type": "object", "additionalProperties": False, "required": list(HYPER_NAMES),
                     "properties": {n: {"type": "array", "items": _num, "minItems": 1}
                                    for n in HYPER_NAMES}}}},
            ],
        },
        "subsample": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "stratified": _bool,
            },
        },
        "finetune": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": _pos_int, "epochs": _pos_int, "momentum": _num,
                "weight_decay": _num, "inner_schedule": {"enum": ["constant", "cosine_decay"]},
                "final_extra_epochs": {"type": "integer", "minimum": 0},
                "eval_batch_size": _pos_int,
            },
        },
    },
}

# blocks that do not change what a run computes
_UNHASHED = ("output_dir", "mode", "checkpoint")
_PRETRAIN_KEYS = ("seed", "data", "model", "pretrain")

PRETRAIN_DEFAULTS = {"epochs": 8, "lr": 0.01, "batch_size": 64, "momentum": 0.9,
                     "weight_decay": 1e-4, "schedule": "cosine_decay"}


def _hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".", check_files: bool = True) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {exc.message}") from None
        cfg = cls(raw, Path(base_dir))
        cfg._check_semantics()
        if check_files:
            cfg.check_files()
        return cfg

    @classmethod
    def load(cls, path, overrides: dict | None = None, check_files: bool = True) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(apply_overrides(raw, overrides or {}), path.parent, check_files)

    def _check_semantics(self):
        try:
            self.hyper()
            self.finetune()
            self.criterion()
            self.toggles()
            self.subsample()
            if self.raw.get("space") is not None and not isinstance(self.raw["space"], str) \
                    and "axes" in self.raw["space"]:
                self.space()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def check_files(self) -> None:
        """Every referenced input file must exist; raised as a config error."""
        d = self.raw["data"]
        for key in ("train", "test"):
            for p in d.get(key, []):
                if not self.path(p).is_file():
                    raise ConfigError(f"dataset file not found: {self.path(p)}")
        for block in ("schedule", "space"):
            b = self.raw.get(block)
            if isinstance(b, dict) and "path" in b and not self.path(b["path"]).is_file():
                raise ConfigError(f"{block} file not found: {self.path(b['path'])}")

    # -- identity ----------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def mode(self) -> str:
        return self.raw.get("mode", "ice")

    @property
    def hash(self) -> str:
        return _hash({k: v for k, v in self.raw.items() if k not in _UNHASHED})

    @property
    def pretrain_hash(self) -> str:
        return _hash({k: self.raw.get(k) for k in _PRETRAIN_KEYS})

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path(self.raw.get("output_dir", "runs"))

    @property
    def checkpoint_path(self) -> Path:
        if "checkpoint" in self.raw:
            return self.path(self.raw["checkpoint"])
        return self.output_dir / f"pretrained_{self.pretrain_hash}.icep"

    # -- typed views -------------------------------------------------------

    def datasets(self) -> tuple[Dataset, Dataset]:
        d = self.raw["data"]
        if "generate" in d:
            g = d["generate"]
            return dataio.synthetic_splits(
                g.get("classes", 10), g.get("train_per_class", 500), g.get("test_per_class", 100),
                tuple(g.get("shape", (3, 16, 16))), g.get("seed", self.seed), g.get("noise", 1.5),
            )
        train = dataio.concat([dataio.load(self.path(p), d["format"], "train") for p in d["train"]])
        test = dataio.concat([dataio.load(self.path(p), d["format"], "test") for p in d["test"]])
        return (_limit(train, d.get("train_limit"), self.seed),
                _limit(test, d.get("test_limit"), self.seed))

    def build_model(self, input_shape, num_classes) -> Network:
        m = self.raw.get("model", {})
        seed = m.get("init_seed", self.seed)
        if "layers" not in m:
            return reference_cnn(tuple(input_shape), num_classes, seed,
                                 tuple(m.get("widths", (8, 16, 64, 32))))
        return build_layers(m["layers"], tuple(input_shape), num_classes, seed)

    def pretrain(self) -> dict:
        return {**PRETRAIN_DEFAULTS, **self.raw.get("pretrain", {})}

    def schedule(self, net: Network) -> PruneSchedule:
        s = self.raw.get("schedule", {"ratio": 0.6})
        if "path" in s:
            sched = read_schedule(self.path(s["path"]))
        else:
            sched = uniform_schedule(net, s["ratio"], s.get("steps"))
        sched.validate(net)
        return sched

    def criterion(self) -> Criterion:
        c = self.raw.get("criterion", {})
        return Criterion(CLI_NAMES[c.get("kind", "l1")], c.get("seed", self.seed),
                         c.get("calib_batch_size", 128), c.get("histogram_bins", 32))

    def toggles(self) -> PipelineToggles:
        t = self.raw.get("toggles", {})
        return PipelineToggles(t.get("threshold", True), t.get("freezing", True),
                               t.get("scheduler", True))

    def hyper(self) -> HyperParams:
        defaults = HyperParams().flat()
        return HyperParams.from_flat(**{**defaults, **self.raw.get("hyper", {})})

    def space(self) -> SearchSpace | None:
        s = self.raw.get("space")
        if s is None:
            return None
        if s == "default":
            return default_space(self.hyper().lr.lr_base)
        if "path" in s:
            return read_space(self.path(s["path"]))
        return SearchSpace({k: tuple(v) for k, v in s["axes"].items()})

    def subsample(self) -> SubsampleSpec:
        s = self.raw.get("subsample", {})
        return SubsampleSpec(s.get("fraction", 0.1), s.get("seed", self.seed), s.get("stratified", True))

    def finetune(self) -> FineTuneConfig:
        return FineTuneConfig(**self.raw.get("finetune", {}))


def _limit(d: Dataset, limit, seed) -> Dataset:
    if limit is None or limit >= len(d):
        return d
    return dataio.subsample(d, SubsampleSpec(limit / len(d), seed))


def build_layers(specs: list[dict], input_shape: tuple, num_classes: int, seed: int) -> Network:
    """Instantiate a layer list, inferring every input size from the running shape."""
    rng = np.random.default_rng(seed)
    layers, shape = [], input_shape
    for k, s in enumerate(specs):
        kind = s["kind"]
        out = num_classes if s.get("out") == "classes" else s.get("out")
        if kind in ("conv2d", "dense") and out is None:
            raise ConfigError(f"model layer {k} ({kind}) needs 'out'")
        prunable = s.get("prunable", True)
        if kind == "conv2d":
            if len(shape) != 3:
                raise ConfigError(f"model layer {k}: conv2d needs (C, H, W) input, got {shape}")
            layer = Conv2d(shape[0], out, s.get("kernel", 3), s.get("padding"), rng, prunable)
        elif kind == "dense":
            if len(shape) != 1:
                raise ConfigError(f"model layer {k}: dense needs flat input, got {shape}; add a flatten")
            layer = Dense(shape[0], out, rng, prunable)
        elif kind == "relu":
            layer = ReLU()
        elif kind == "maxpool2d":
            layer = MaxPool2d(s.get("size", 2))
        else:
            layer = Flatten()
        try:
            shape = layer.output_shape(shape)
        except ValueError as exc:
            raise ConfigError(f"model layer {k}: {exc}") from None
        layers.append(layer)
    if shape != (num_classes,):
        raise ConfigError(f"model output shape {shape} does not match {num_classes} classes")
    return Network(layers, input_shape)


def _set(raw: dict, dotted: str, value) -> None:
    *parents, leaf = dotted.split(".")
    node = raw
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Apply ``{"a.b": value}`` overrides (None values are skipped) to a copy of ``raw``."""
    raw = copy.deepcopy(raw)
    for key, value in overrides.items():
        if value is not None:
            _set(raw, key, value)
    return raw
