"""Grid search over the pipeline hyperparameters with the time/accuracy objective."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .hyper import HYPER_NAMES, HyperParams

log = logging.getLogger(__name__)

DELTA_A_FLOOR = 1e-6


def objective(pt_seconds: float, delta_a: float) -> float:
    """(PT + dA) / max(PT, dA), with dA floored at 1e-6 so accuracy gains can't reward slow runs."""
    if not (math.isfinite(pt_seconds) and math.isfinite(delta_a)):
        raise ValueError(f"objective needs finite inputs, got PT={pt_seconds}, delta_a={delta_a}")
    if pt_seconds <= 0:
        raise ValueError(f"pruning time must be positive, got {pt_seconds}")
    d = max(delta_a, DELTA_A_FLOOR)
    return (pt_seconds + d) / max(pt_seconds, d)


@dataclass(frozen=True)
class SearchSpace:
    axes: dict[str, tuple[float, ...]]

    def __post_init__(self):
        missing = set(HYPER_NAMES) - set(self.axes)
        extra = set(self.axes) - set(HYPER_NAMES)
        if missing or extra:
            raise ValueError(f"search space axes must be exactly {HYPER_NAMES}; "
                             f"missing {sorted(missing)}, unknown {sorted(extra)}")
        axes = {}
        for name in HYPER_NAMES:
            values = tuple(sorted(float(v) for v in self.axes[name]))
            if not values:
                raise ValueError(f"axis {name!r} is empty")
            axes[name] = values
        object.__setattr__(self, "axes", axes)
        if max(axes["delta"]) >= min(axes["lr_base"]):
            raise ValueError("every delta must be below every lr_base")
        # constructing the extremes checks the remaining ranges
        for pick in (min, max):
            HyperParams.from_flat(**{n: pick(v) for n, v in axes.items()})

    def __len__(self):
        return math.prod(len(v) for v in self.axes.values())

    def points(self):
        """Cartesian product in lexicographic order of (theta, eta, lr_base, delta, p, beta)."""
        for combo in itertools.product(*(self.axes[n] for n in HYPER_NAMES)):
            yield HyperParams.from_flat(*combo)


def default_space(lr_base: float = 0.001) -> SearchSpace:
    return SearchSpace({
        "theta": (0.01, 0.02, 0.05),
        "eta": (0.0, 0.25, 0.5),
        "lr_base": (lr_base,),
        "delta": (0.25 * lr_base, 0.5 * lr_base, 0.75 * lr_base),
        "p": (0.2, 0.35, 0.5),
        "beta": (1.0, 2.0, 4.0),
    })


@dataclass(frozen=True)
class Trial:
    params: HyperParams
    pt_seconds: float
    delta_a: float
    error: float


@dataclass(frozen=True)
class TuneResult:
    best: HyperParams
    best_error: float
    trials: tuple[Trial, ...]


def grid_search(space: SearchSpace,
                evaluate: Callable[[HyperParams], tuple[float, float]]) -> TuneResult:
    """Evaluate every grid point; a failing point is logged with error = inf."""
    trials = []
    best, best_error = None, math.inf
    for k, lam in enumerate(space.points()):
        try:
            pt, delta_a = evaluate(lam)
            e = objective(pt, delta_a)
        except Exception as exc:  # noqa: BLE001 - one bad point must not end the search
            log.warning("grid point %d %s failed: %s", k, lam.flat(), exc)
            pt, delta_a, e = math.nan, math.nan, math.inf
        trials.append(Trial(lam, pt, delta_a, e))
        if best is None or e < best_error:
            best, best_error = lam, e
    return TuneResult(best, best_error, tuple(trials))


# -- files -------------------------------------------------------------------

def read_space(path) -> SearchSpace:
    """``key=v1,v2,...`` per line; ``#`` starts a comment."""
    axes = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, values = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=values")
        axes[key.strip()] = tuple(float(v) for v in values.split(",") if v.strip())
    return SearchSpace(axes)


def write_space(space: SearchSpace, path) -> None:
    Path(path).write_text("".join(
        f"{n}={','.join(repr(v) for v in space.axes[n])}\n" for n in HYPER_NAMES
    ))


def write_trials(result: TuneResult, path, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*HYPER_NAMES, "pt_seconds", "delta_a", "error"])
        for t in result.trials:
            flat = t.params.flat()
            w.writerow([*(repr(flat[n]) for n in HYPER_NAMES),
                        repr(t.pt_seconds), repr(t.delta_a), repr(t.error)])
