"""Running quantile estimators driven by stochastic-approximation updates.

The fast-timescale recursion is

    q <- q + beta_k * (alpha - 1{return <= q})

optionally importance-weighted (off-policy) or fed through a scalar
adaptive-moment update instead of the plain step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError


@dataclass
class StepSchedule:
    """Decaying positive step-size sequence.

    Two forms: polynomial  b * k^{-exponent}  (k >= 1), and an exponential
    staircase that multiplies an initial value by `factor` every
    `interval` steps.
    """

    form: str  # "polynomial" | "staircase"
    base: float = 0.5
    exponent: float = 0.7
    factor: float = 0.9
    interval: int = 2500

    def value(self, k: int) -> float:
        if self.form == "polynomial":
            return self.base * float(max(k, 1)) ** (-self.exponent)
        if self.form == "staircase":
            return self.base * self.factor ** (k // self.interval)
        raise ConfigError(f"unknown schedule form {self.form!r}")

    @staticmethod
    def polynomial(b: float, exponent: float) -> "StepSchedule":
        return StepSchedule("polynomial", base=b, exponent=exponent)

    @staticmethod
    def staircase(initial: float, factor: float, interval: int
                  ) -> "StepSchedule":
        return StepSchedule("staircase", base=initial, factor=factor,
                            interval=interval)


@dataclass
class _ScalarAdam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: float = 0.0
    v: float = 0.0

    def update(self, x: float, grad: float, lr_scale: float = 1.0) -> float:
        self.step += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.step)
        vhat = self.v / (1 - self.beta2 ** self.step)
        return x - self.lr * lr_scale * mhat / (math.sqrt(vhat) + self.eps)


@dataclass
class QuantileTracker:
    """Single running quantile estimate q of the return distribution."""

    alpha: float
    schedule: StepSchedule
    q: float = 0.0
    step_count: int = 0
    mode: str = "sa"  # "sa" | "adam"
    adam: _ScalarAdam | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie strictly inside (0, 1)")
        if self.mode == "adam" and self.adam is None:
            self.adam = _ScalarAdam(lr=self.schedule.base)

    def sa_step(self, return_value: float):
        """One recursion step: q moves up by beta*alpha when the return is
        above q, down by beta*(1-alpha) otherwise."""
        if not math.isfinite(return_value):
            raise TrainingError("non-finite return fed to quantile tracker")
        self.step_count += 1
        indicator = 1.0 if return_value <= self.q else 0.0
        if self.mode == "adam":
            scale = (self.schedule.value(self.step_count)
                     / self.schedule.base)
            self.q = self.adam.update(self.q, indicator - self.alpha,
                                      lr_scale=scale)
        else:
            beta = self.schedule.value(self.step_count)
            self.q += beta * (self.alpha - indicator)


@dataclass
class QuantileBank:
    """Per-horizon quantile estimates q^l for l in [t0, t_max]."""

    alpha: float
    schedule: StepSchedule
    t0: int
    t_max: int
    mode: str = "sa"
    q: np.ndarray = None
    step_counts: np.ndarray = None
    skipped: int = 0
    _adams: list = field(default_factory=list)

    def __post_init__(self):
        if self.t0 > self.t_max:
            raise ConfigError("bank truncation exceeds the horizon")
        n = self.t_max - self.t0 + 1
        if self.q is None:
            self.q = np.zeros(n)
        self.step_counts = np.zeros(n, dtype=np.int64)
        if self.mode == "adam":
            self._adams = [_ScalarAdam(lr=self.schedule.base)
                           for _ in range(n)]

    def index(self, l: int) -> int:
        if not self.t0 <= l <= self.t_max:
            raise ConfigError(f"horizon {l} outside [{self.t0}, {self.t_max}]")
        return l - self.t0

    def value(self, l: int) -> float:
        return float(self.q[self.index(l)])

    def sa_step_weighted(self, l: int, return_value: float,
                         ratio: float = 1.0):
        """Importance-weighted update of entry l only.

        A non-finite ratio skips the update and bumps the `skipped`
        diagnostic counter instead of poisoning the tracker.
        """
        i = self.index(l)
        if not math.isfinite(ratio) or ratio < 0.0:
            self.skipped += 1
            return
        if not math.isfinite(return_value):
            raise TrainingError("non-finite return fed to quantile bank")
        self.step_counts[i] += 1
        indicator = ratio if return_value <= self.q[i] else 0.0
        if self.mode == "adam":
            k = int(self.step_counts[i])
            scale = self.schedule.value(k) / self.schedule.base
            self.q[i] = self._adams[i].update(self.q[i],
                                              indicator - self.alpha,
                                              lr_scale=scale)
        else:
            beta = self.schedule.value(int(self.step_counts[i]))
            self.q[i] += beta * (self.alpha - indicator)


def warm_start(samples, alpha: float) -> float:
    """Order statistic at index ceil(alpha * N) of the ascending sort."""
    if len(samples) == 0:
        raise ConfigError("warm_start needs at least one sample")
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    idx = max(int(math.ceil(alpha * len(xs))), 1) - 1
    return float(xs[idx])
