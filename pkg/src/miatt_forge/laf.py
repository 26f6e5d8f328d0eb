"""Logical evaluation of predictions against a MIATT set.

The pipeline is: narrate the set's facts into the logical true target,
tally per-pixel agreement into logical confusion counts, then build the six
logical metrics.  Pixels no target determines are excluded from every count
denominator; they are tallied separately as ``undetermined``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .core import (
    NONOBJECT,
    OBJECT,
    UNKNOWN,
    MiattSet,
    PartialLabeling,
    ProbabilityMap,
    ShapeMismatchError,
    derive_ltt,
)

METRIC_NAMES = ("LPrecision", "LRecall", "LF1", "LAccuracy", "LIoU", "LErrors")


class ZeroDivisionPolicy(str, Enum):
    """How ratio metrics behave on a zero denominator."""

    UNDEFINED = "undefined"  # report the metric as undefined (None / null / nan)
    ZERO_FILL = "zero_fill"  # report 0.0 so CSV pipelines stay numeric


class IndeterminatePredictionError(ValueError):
    """The prediction contains Unknown cells but must be fully determined."""


@dataclass(frozen=True)
class LafParams:
    """Evaluation parameters.

    ``metric_selection`` restricts which metrics appear in serialized
    outputs; the full MetricSet is always computed so its internal
    identities (harmonic mean, error sum) hold.
    """

    binarize_threshold: float = 0.5
    zero_division_policy: ZeroDivisionPolicy = ZeroDivisionPolicy.UNDEFINED
    metric_selection: tuple[str, ...] = METRIC_NAMES

    def __post_init__(self):
        if not (0.0 < self.binarize_threshold < 1.0):
            raise ValueError("binarize_threshold must lie strictly inside (0, 1)")
        bad = set(self.metric_selection) - set(METRIC_NAMES)
        if bad:
            raise ValueError(f"unknown metric names: {sorted(bad)}")
        object.__setattr__(self, "metric_selection", tuple(self.metric_selection))
        object.__setattr__(
            self, "zero_division_policy", ZeroDivisionPolicy(self.zero_division_policy)
        )


@dataclass(frozen=True)
class ConfusionCounts:
    """Logical confusion counts; undetermined pixels are kept out of all four."""

    ltp: int
    lfp: int
    ltn: int
    lfn: int
    undetermined: int

    def __post_init__(self):
        for name in ("ltp", "lfp", "ltn", "lfn", "undetermined"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.ltp + self.lfp + self.ltn + self.lfn + self.undetermined

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.ltp + other.ltp,
            self.lfp + other.lfp,
            self.ltn + other.ltn,
            self.lfn + other.lfn,
            self.undetermined + other.undetermined,
        )

    def as_dict(self) -> dict:
        return {
            "ltp": self.ltp,
            "lfp": self.lfp,
            "ltn": self.ltn,
            "lfn": self.lfn,
            "undetermined": self.undetermined,
        }


@dataclass(frozen=True)
class MetricSet:
    """The six logical metrics.  Ratio metrics are None when undefined."""

    lprecision: Optional[float]
    lrecall: Optional[float]
    lf1: Optional[float]
    laccuracy: Optional[float]
    liou: Optional[float]
    lerrors: int

    def by_name(self) -> dict[str, Optional[float]]:
        return {
            "LPrecision": self.lprecision,
            "LRecall": self.lrecall,
            "LF1": self.lf1,
            "LAccuracy": self.laccuracy,
            "LIoU": self.liou,
            "LErrors": self.lerrors,
        }

    def as_dict(self, selection: tuple[str, ...] = METRIC_NAMES) -> dict:
        full = self.by_name()
        return {name: full[name] for name in METRIC_NAMES if name in selection}


def logical_fact_narrate(m: MiattSet, params: LafParams = LafParams()) -> PartialLabeling:
    """Narrate the set's facts: the merged logical true target."""
    return derive_ltt(m)


def logical_consistency_estimate(
    pred: PartialLabeling, lf: PartialLabeling, params: LafParams = LafParams()
) -> ConfusionCounts:
    """Tally the prediction against the narrated facts, pixel by pixel."""
    if not pred.same_shape(lf):
        raise ShapeMismatchError(
            f"prediction {pred.width}x{pred.height} vs facts {lf.width}x{lf.height}"
        )
    if not pred.is_complete:
        raise IndeterminatePredictionError("prediction must not contain Unknown cells")

    p = pred.flat()
    f = lf.flat()
    pred_obj = p == int(OBJECT)
    fact_obj = f == int(OBJECT)
    fact_non = f == int(NONOBJECT)
    return ConfusionCounts(
        ltp=int(np.count_nonzero(fact_obj & pred_obj)),
        lfp=int(np.count_nonzero(fact_non & pred_obj)),
        ltn=int(np.count_nonzero(fact_non & ~pred_obj)),
        lfn=int(np.count_nonzero(fact_obj & ~pred_obj)),
        undetermined=int(np.count_nonzero(f == int(UNKNOWN))),
    )


def _ratio(num: int, den: int, policy: ZeroDivisionPolicy) -> Optional[float]:
    if den == 0:
        return 0.0 if policy is ZeroDivisionPolicy.ZERO_FILL else None
    return num / den


def logical_assessment_metric_build(
    c: ConfusionCounts, params: LafParams = LafParams()
) -> MetricSet:
    """Build the six logical metrics from confusion counts."""
    policy = params.zero_division_policy
    lprecision = _ratio(c.ltp, c.ltp + c.lfp, policy)
    lrecall = _ratio(c.ltp, c.ltp + c.lfn, policy)
    if lprecision is None or lrecall is None or (lprecision + lrecall) == 0.0:
        lf1 = 0.0 if policy is ZeroDivisionPolicy.ZERO_FILL else None
    else:
        lf1 = 2.0 * (lprecision * lrecall) / (lprecision + lrecall)
    laccuracy = _ratio(c.ltp + c.ltn, c.ltp + c.lfp + c.ltn + c.lfn, policy)
    liou = _ratio(c.ltp, c.ltp + c.lfp + c.lfn, policy)
    return MetricSet(
        lprecision=lprecision,
        lrecall=lrecall,
        lf1=lf1,
        laccuracy=laccuracy,
        liou=liou,
        lerrors=c.lfp + c.lfn,
    )


def binarize(t: ProbabilityMap, threshold: float = 0.5) -> PartialLabeling:
    """Threshold a probability map: Object iff prob > threshold.

    The comparison is strict, so a probability exactly at the threshold maps
    to NonObject (an all-0.5 map binarizes to all-NonObject at 0.5).
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie strictly inside (0, 1)")
    return PartialLabeling(
        np.where(t.probs > threshold, int(OBJECT), int(NONOBJECT)).astype(np.int8)
    )


def evaluate(
    pred: Union[ProbabilityMap, PartialLabeling],
    m: MiattSet,
    params: LafParams = LafParams(),
) -> tuple[ConfusionCounts, MetricSet]:
    """Full evaluation: binarize if needed, narrate, tally, build metrics."""
    if isinstance(pred, ProbabilityMap):
        pred = binarize(pred, params.binarize_threshold)
    lf = logical_fact_narrate(m, params)
    counts = logical_consistency_estimate(pred, lf, params)
    return counts, logical_assessment_metric_build(counts, params)
