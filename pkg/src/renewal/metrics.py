"""Perception score triple, improvement rate, and the optimizer's scalar reward."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .prompts import METRICS

DEFAULT_EPSILON = 1e-6

SCORE_RANGE = (0.0, 10.0)


class UndefinedBaselineError(ValueError):
    """Previous score too close to zero for a relative improvement."""


class RewardSpecError(ValueError):
    """Inconsistent :class:`RewardSpec`."""


@dataclass(frozen=True)
class PerceptionScores:
    """(safe, beauty, lively) on the nominal 0-10 scale.

    Out-of-range values are accepted with a warning; they are clamped only by
    :meth:`clamped` for reporting, never inside reward arithmetic.
    """

    safe: float
    beauty: float
    lively: float

    def __post_init__(self):
        for name in METRICS:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} score must be finite, got {value!r}")
        lo, hi = SCORE_RANGE
        outside = [m for m in METRICS if not lo <= getattr(self, m) <= hi]
        if outside:
            warnings.warn(
                f"perception scores outside [{lo}, {hi}]: {outside}", stacklevel=2
            )

    def get(self, metric: str) -> float:
        if metric not in METRICS:
            raise KeyError(f"unknown metric {metric!r}")
        return float(getattr(self, metric))

    def as_dict(self) -> dict[str, float]:
        return {m: float(getattr(self, m)) for m in METRICS}

    def clamped(self) -> "PerceptionScores":
        """A copy with every metric clamped into the nominal range (reporting only)."""
        lo, hi = SCORE_RANGE
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return PerceptionScores(
                *(min(hi, max(lo, getattr(self, m))) for m in METRICS)
            )


@dataclass(frozen=True)
class RewardSpec:
    """How per-metric improvements collapse into one scalar reward.

    ``single`` mode rewards the relative improvement of one objective metric;
    ``weighted`` mode takes a convex combination across all three.
    """

    mode: str = "single"
    objective: str | None = "safe"
    weights: tuple[float, float, float] | None = None
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.epsilon <= 0:
            raise RewardSpecError("epsilon must be positive")
        if self.mode == "single":
            if self.objective not in METRICS:
                raise RewardSpecError(f"single mode needs an objective in {METRICS}")
        elif self.mode == "weighted":
            if self.weights is None or len(self.weights) != len(METRICS):
                raise RewardSpecError("weighted mode needs one weight per metric")
            if any(w < 0 for w in self.weights):
                raise RewardSpecError("weights must be non-negative")
            if abs(sum(self.weights) - 1.0) > 1e-9:
                raise RewardSpecError("weights must sum to 1")
        else:
            raise RewardSpecError(f"mode must be 'single' or 'weighted', got {self.mode!r}")


def improvement_rate(previous: float, renewal: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """(renewal - previous) / previous; negative when the edit made things worse."""
    if previous <= epsilon:
        raise UndefinedBaselineError(
            f"previous score {previous!r} is <= epsilon {epsilon!r}; rate undefined"
        )
    return (renewal - previous) / previous


def reward(raw: PerceptionScores, edited: PerceptionScores, spec: RewardSpec) -> float:
    """Scalar reward for an edit, per ``spec.mode``."""
    if spec.mode == "single":
        assert spec.objective is not None
        return improvement_rate(raw.get(spec.objective), edited.get(spec.objective), spec.epsilon)
    total = 0.0
    assert spec.weights is not None
    for metric, weight in zip(METRICS, spec.weights):
        if weight == 0.0:
            continue
        total += weight * improvement_rate(raw.get(metric), edited.get(metric), spec.epsilon)
    return total
