from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .scheduler import LrHyper

HYPER_NAMES = ("theta", "eta", "lr_base", "delta", "p", "beta")


@dataclass(frozen=True)
class HyperParams:
    """The six tuned values: accuracy-drop gate, freeze fraction, and the LR cap shape.

    ``theta`` is in accuracy-fraction units (0.02 = two points). ``math.inf``
    never fine-tunes, ``-math.inf`` always does.
    """

    theta: float = 0.02
    eta: float = 0.25
    lr: LrHyper = field(default_factory=LrHyper)

    def __post_init__(self):
        if math.isnan(self.theta):
            raise ValueError("theta must not be NaN")
        if not 0 <= self.eta < 1:
            raise ValueError(f"eta must be in [0, 1), got {self.eta}")

    @classmethod
    def from_flat(cls, theta, eta, lr_base, delta, p, beta) -> "HyperParams":
        return cls(theta, eta, LrHyper(lr_base, delta, p, beta))

    def flat(self) -> dict[str, float]:
        return {"theta": self.theta, "eta": self.eta, **asdict(self.lr)}
