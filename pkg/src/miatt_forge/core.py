"""Grid labelings and Boolean-algebra assessment of multi-target label sets.

A labeling assigns each pixel one of three states: Object, NonObject, or
Unknown.  The determined cells of a labeling are its "facts".  A collection
of at least two strictly partial, mutually consistent labelings over one grid
is a valid MIATT set; merging its facts yields the logical true target (LTT)
that downstream evaluation is scored against.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np


class CellState(IntEnum):
    """Per-pixel label state. Object/NonObject are determined facts."""

    UNKNOWN = 0
    OBJECT = 1
    NONOBJECT = 2


UNKNOWN = CellState.UNKNOWN
OBJECT = CellState.OBJECT
NONOBJECT = CellState.NONOBJECT

STATE_CHARS = {UNKNOWN: "U", OBJECT: "O", NONOBJECT: "N"}
CHAR_STATES = {c: s for s, c in STATE_CHARS.items()}


class ShapeMismatchError(ValueError):
    """Operands have different grid dimensions."""


class EmptySetError(ValueError):
    """A target collection contains no targets at all."""


class AssessmentFailedError(RuntimeError):
    """A MIATT set failed assessment; carries the offending report."""

    def __init__(self, report: "AssessmentReport"):
        self.report = report
        super().__init__(f"MIATT set failed assessment: {report.failure_summary()}")


def _as_cell_array(cells: np.ndarray) -> np.ndarray:
    arr = np.asarray(cells, dtype=np.int8)
    if arr.ndim != 2:
        raise ValueError("cells must be a 2-D grid")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("grid must be at least 1x1")
    if not np.isin(arr, (0, 1, 2)).all():
        raise ValueError("cells must hold CellState values {0, 1, 2}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PartialLabeling:
    """Immutable grid of cell states, row-major, pixel index = row*width + col."""

    cells: np.ndarray  # (height, width) int8 of CellState values

    def __post_init__(self):
        object.__setattr__(self, "cells", _as_cell_array(self.cells))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def size(self) -> int:
        return self.cells.size

    @classmethod
    def from_flat(cls, width: int, height: int, states: Sequence[int]) -> "PartialLabeling":
        arr = np.asarray(list(states), dtype=np.int8)
        if arr.size != width * height:
            raise ValueError(f"expected {width * height} cells, got {arr.size}")
        return cls(arr.reshape(height, width))

    @classmethod
    def from_rows(cls, rows: Sequence[str]) -> "PartialLabeling":
        """Build from strings of O/N/U characters, one per grid row."""
        if not rows:
            raise ValueError("at least one row required")
        width = len(rows[0])
        grid = []
        for r in rows:
            if len(r) != width:
                raise ValueError("all rows must have equal length")
            grid.append([CHAR_STATES[c] for c in r])
        return cls(np.asarray(grid, dtype=np.int8))

    @classmethod
    def filled(cls, width: int, height: int, state: CellState) -> "PartialLabeling":
        return cls(np.full((height, width), int(state), dtype=np.int8))

    @classmethod
    def from_object_mask(cls, mask: np.ndarray) -> "PartialLabeling":
        """Complete labeling: True cells become Object, False NonObject."""
        mask = np.asarray(mask, dtype=bool)
        return cls(np.where(mask, int(OBJECT), int(NONOBJECT)).astype(np.int8))

    def flat(self) -> np.ndarray:
        return self.cells.reshape(-1)

    def determined_mask(self) -> np.ndarray:
        return self.cells != int(UNKNOWN)

    @property
    def is_complete(self) -> bool:
        return bool((self.cells != int(UNKNOWN)).all())

    def same_shape(self, other: "PartialLabeling") -> bool:
        return self.cells.shape == other.cells.shape

    def rows(self) -> list[str]:
        return ["".join(STATE_CHARS[CellState(v)] for v in row) for row in self.cells]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PartialLabeling):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(
            (self.cells == other.cells).all()
        )

    def __hash__(self):
        return hash((self.cells.shape, self.cells.tobytes()))

    def __repr__(self) -> str:
        return f"PartialLabeling({self.width}x{self.height}, facts={fact_count(self)})"


@dataclass(frozen=True, eq=False)
class MiattSet:
    """Ordered collection of candidate targets over one grid.

    Construction is permissive (any count, any shapes) so that invalid sets
    can be built and then diagnosed by ``assess_miatts``.
    """

    targets: tuple[PartialLabeling, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self) -> Iterator[PartialLabeling]:
        return iter(self.targets)

    def __getitem__(self, i: int) -> PartialLabeling:
        return self.targets[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MiattSet):
            return NotImplemented
        return self.targets == other.targets


@dataclass(frozen=True)
class AssessmentReport:
    """Outcome of the Boolean-consistency assessment of a MIATT set.

    ``conflicts`` holds one entry per disputed pixel: (pixel index, first
    target index, second target index) for the lowest-index disagreeing pair.
    ``coverage`` is the exact fraction of pixels determined by at least one
    target.
    """

    count_ok: bool
    partial_flags: tuple[bool, ...]
    consistent: bool
    conflicts: tuple[tuple[int, int, int], ...]
    coverage: Fraction
    passed: bool
    covered_pixels: int
    total_pixels: int

    def failure_summary(self) -> str:
        problems = []
        if not self.count_ok:
            problems.append(f"needs at least 2 targets, has {len(self.partial_flags)}")
        if not all(self.partial_flags):
            full = [i for i, ok in enumerate(self.partial_flags) if not ok]
            problems.append(f"targets {full} are complete, not strictly partial")
        if not self.consistent:
            problems.append(f"{len(self.conflicts)} conflicting pixel(s)")
        return "; ".join(problems) if problems else "ok"

    def as_dict(self) -> dict:
        return {
            "count_ok": self.count_ok,
            "partial_flags": list(self.partial_flags),
            "consistent": self.consistent,
            "conflicts": [list(c) for c in self.conflicts],
            "coverage": float(self.coverage),
            "covered_pixels": self.covered_pixels,
            "total_pixels": self.total_pixels,
            "passed": self.passed,
        }


def fact_count(t: PartialLabeling) -> int:
    """Number of determined (non-Unknown) cells of a labeling."""
    return int(np.count_nonzero(t.cells))


def _stacked_cells(m: MiattSet) -> np.ndarray:
    if len(m.targets) == 0:
        raise EmptySetError("cannot assess an empty target set")
    shapes = {t.cells.shape for t in m.targets}
    if len(shapes) > 1:
        raise ShapeMismatchError(f"targets have differing shapes: {sorted(shapes)}")
    return np.stack([t.flat() for t in m.targets])  # (N, pixels)


def assess_miatts(m: MiattSet) -> AssessmentReport:
    """Check target count, strict partiality, and pairwise fact consistency.

    A pixel conflicts when one target asserts Object and another NonObject
    there; all conflicts are reported (not just the first) so callers can
    surface every dispute at once.
    """
    flat = _stacked_cells(m)
    n_targets, n_pixels = flat.shape

    is_obj = flat == int(OBJECT)
    is_non = flat == int(NONOBJECT)
    has_obj = is_obj.any(axis=0)
    has_non = is_non.any(axis=0)

    conflict_pixels = np.flatnonzero(has_obj & has_non)
    first_obj = is_obj.argmax(axis=0)
    first_non = is_non.argmax(axis=0)
    conflicts = tuple(
        (int(p), int(min(first_obj[p], first_non[p])), int(max(first_obj[p], first_non[p])))
        for p in conflict_pixels
    )

    covered = int(np.count_nonzero(has_obj | has_non))
    partial_flags = tuple(fact_count(t) < n_pixels for t in m.targets)
    count_ok = n_targets >= 2
    consistent = len(conflicts) == 0
    return AssessmentReport(
        count_ok=count_ok,
        partial_flags=partial_flags,
        consistent=consistent,
        conflicts=conflicts,
        coverage=Fraction(covered, n_pixels),
        passed=count_ok and all(partial_flags) and consistent,
        covered_pixels=covered,
        total_pixels=n_pixels,
    )


def derive_ltt(m: MiattSet) -> PartialLabeling:
    """Merge a passing set's facts into the logical true target.

    The result asserts the union of all targets' facts; a pixel stays
    Unknown only when no target determines it.
    """
    report = assess_miatts(m)
    if not report.passed:
        raise AssessmentFailedError(report)
    flat = _stacked_cells(m)
    has_obj = (flat == int(OBJECT)).any(axis=0)
    has_non = (flat == int(NONOBJECT)).any(axis=0)
    merged = np.where(has_obj, int(OBJECT), np.where(has_non, int(NONOBJECT), int(UNKNOWN)))
    shape = m.targets[0].cells.shape
    return PartialLabeling(merged.astype(np.int8).reshape(shape))


def restrict(full: PartialLabeling, ltt: PartialLabeling) -> PartialLabeling:
    """Mask a complete labeling down to the pixels the LTT determines."""
    if not full.same_shape(ltt):
        raise ShapeMismatchError(
            f"shape {full.width}x{full.height} vs {ltt.width}x{ltt.height}"
        )
    masked = np.where(ltt.determined_mask(), full.cells, np.int8(int(UNKNOWN)))
    return PartialLabeling(masked.astype(np.int8))


@dataclass(frozen=True, eq=False)
class Instance:
    """Grayscale input image with values in [0, 1]."""

    pixels: np.ndarray  # (height, width) float64

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("pixels must be a non-empty 2-D grid")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            (self.pixels == other.pixels).all()
        )


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Per-pixel object probability, same layout as Instance."""

    probs: np.ndarray  # (height, width) float64 in [0, 1]

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("probs must be a non-empty 2-D grid")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "probs", arr)

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProbabilityMap):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(
            (self.probs == other.probs).all()
        )
