"""Synthetic scenes, machine-assisted target generation, and conflict injection.

Targets are generated as consistent sub-hypotheses of a complete reference
labeling: connected blobs grown inside each class region, copying the
reference's labels, so every generated target asserts a strict subset of the
reference's facts and the whole set always passes assessment.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    NONOBJECT,
    OBJECT,
    UNKNOWN,
    Instance,
    MiattSet,
    PartialLabeling,
    assess_miatts,
)
from .rng import SplitStream

# child-stream tags (see README, "Random streams")
_TAG_SCENE_NOISE = 0x5CE7E
_TAG_TARGET = 0x7A26E7
_TAG_TOPUP = 0x70F0F
_TAG_FLIPS = 0xF11F5


class DegenerateSceneError(ValueError):
    """The requested scene has only one class present."""


class InfeasibleCoverageError(RuntimeError):
    """Collective coverage target cannot be met with strictly partial targets."""


class NoOverlapError(ValueError):
    """No pixel is determined by two or more targets, nothing to contradict."""


@dataclass(frozen=True)
class SceneParams:
    """Straight-ribbon scene: a bright band over a darker background."""

    width: int = 64
    height: int = 64
    lane_half_width: float = 4.0
    lane_angle: float = 0.35  # radians, 0 = horizontal band
    lane_offset: float = 32.0  # signed distance of the band center line
    lane_intensity: float = 0.75
    background_intensity: float = 0.25
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be positive")
        if self.lane_half_width <= 0:
            raise ValueError("lane_half_width must be positive")
        for name in ("lane_intensity", "background_intensity"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


@dataclass(frozen=True)
class GenParams:
    """Knobs of the sub-hypothesis sampler."""

    n_targets: int = 4
    object_coverage_range: tuple[float, float] = (0.3, 0.6)
    nonobject_coverage_range: tuple[float, float] = (0.2, 0.4)
    blob_seeds_per_target: int = 3
    target_collective_coverage: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.n_targets < 2:
            raise ValueError("n_targets must be >= 2: a MIATT set needs at least two targets")
        for name in ("object_coverage_range", "nonobject_coverage_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi < 1.0):
                raise ValueError(
                    f"{name} must satisfy 0 < lo <= hi < 1 (strict partiality per target)"
                )
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not (0.0 < self.target_collective_coverage <= 1.0):
            raise ValueError("target_collective_coverage must lie in (0, 1]")
        if self.blob_seeds_per_target < 1:
            raise ValueError("blob_seeds_per_target must be positive")


def generate_synthetic_scene(p: SceneParams) -> tuple[Instance, PartialLabeling]:
    """Render the ribbon scene and its complete reference labeling.

    A pixel at (row, col) is lane iff its distance to the line
    ``-col*sin(angle) + row*cos(angle) = offset`` is at most the half-width.
    Pixel values are quantized to the 256-level grid after noise so that
    writing and re-reading the image file is exactly lossless.
    """
    cols, rows = np.meshgrid(np.arange(p.width), np.arange(p.height))
    dist = np.abs(-cols * np.sin(p.lane_angle) + rows * np.cos(p.lane_angle) - p.lane_offset)
    lane = dist <= p.lane_half_width

    n_lane = int(lane.sum())
    if n_lane == 0 or n_lane == lane.size:
        raise DegenerateSceneError(
            f"ribbon covers {n_lane}/{lane.size} pixels; both classes must be present"
        )

    img = np.where(lane, p.lane_intensity, p.background_intensity)
    if p.noise_sigma > 0:
        noise = SplitStream(p.seed).child(_TAG_SCENE_NOISE).normals(lane.size)
        img = img + p.noise_sigma * noise.reshape(lane.shape)
    img = np.clip(img, 0.0, 1.0)
    img = np.round(img * 255.0) / 255.0
    return Instance(img), PartialLabeling.from_object_mask(lane)


def _grow_class_subset(
    class_mask_flat: np.ndarray,
    quota: int,
    n_seeds: int,
    width: int,
    stream: SplitStream,
) -> np.ndarray:
    """Pick `quota` pixels of one class as connected blobs (BFS growth).

    Returns a boolean mask over flat pixel indices.  Growth is breadth-first
    from randomly seeded class pixels with a fixed neighbor order, restarting
    from a fresh random pixel whenever the frontier dies out, so the result
    is fully determined by the stream.
    """
    class_indices = np.flatnonzero(class_mask_flat)
    chosen = np.zeros(class_mask_flat.size, dtype=bool)
    height = class_mask_flat.size // width
    count = 0
    queue: deque[int] = deque()

    def push(idx: int) -> bool:
        nonlocal count
        if class_mask_flat[idx] and not chosen[idx]:
            chosen[idx] = True
            count += 1
            queue.append(idx)
            return True
        return False

    seed_order = stream.choose(class_indices.size, min(n_seeds, class_indices.size))
    seeds = iter(class_indices[seed_order])
    while count < quota:
        if not queue:
            started = False
            for s in seeds:
                if push(int(s)):
                    started = True
                    break
            if not started:
                remaining = class_indices[~chosen[class_indices]]
                push(int(remaining[stream.integer(remaining.size)]))
            continue
        idx = queue.popleft()
        r, c = divmod(idx, width)
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if count == quota:
                break
            if 0 <= nr < height and 0 <= nc < width:
                push(nr * width + nc)
    return chosen


def generate_miatts_abductive(reference: PartialLabeling, p: GenParams) -> MiattSet:
    """Sample N strictly partial, mutually consistent sub-labelings.

    Per target, per-class coverage fractions are drawn from the configured
    ranges and connected blobs of that class are grown to the resulting
    quotas.  If the union then covers less than ``target_collective_coverage``
    of the grid, uncovered reference facts are dealt round-robin to targets
    with room (a target never reaches completeness).  Raises
    InfeasibleCoverageError when the requested coverage cannot be met that
    way.
    """
    if not reference.is_complete:
        raise ValueError("reference labeling must be complete (no Unknown cells)")
    ref_flat = reference.flat()
    n_pixels = ref_flat.size
    obj_mask = ref_flat == int(OBJECT)
    non_mask = ref_flat == int(NONOBJECT)
    n_obj = int(obj_mask.sum())
    n_non = int(non_mask.sum())
    if n_obj == 0 or n_non == 0:
        raise ValueError("reference must contain both classes")

    root = SplitStream(p.seed)
    asserted_per_target: list[np.ndarray] = []
    for t_idx in range(p.n_targets):
        stream = root.child(_TAG_TARGET, t_idx)
        f_obj = stream.uniform(*p.object_coverage_range)
        f_non = stream.uniform(*p.nonobject_coverage_range)
        k_obj = max(1, int(np.floor(f_obj * n_obj)))
        k_non = max(1, int(np.floor(f_non * n_non)))
        # keep the target strictly partial even on tiny grids
        overflow = (k_obj + k_non) - (n_pixels - 1)
        if overflow > 0:
            if k_obj >= k_non:
                k_obj = max(1, k_obj - overflow)
            else:
                k_non = max(1, k_non - overflow)
        chosen = _grow_class_subset(obj_mask, k_obj, p.blob_seeds_per_target, reference.width, stream)
        chosen |= _grow_class_subset(non_mask, k_non, p.blob_seeds_per_target, reference.width, stream)
        asserted_per_target.append(chosen)

    covered = np.logical_or.reduce(asserted_per_target)
    required = p.target_collective_coverage
    if Fraction(int(covered.sum()), n_pixels) < required:
        topup = root.child(_TAG_TOPUP)
        uncovered = np.flatnonzero(~covered)
        order = uncovered[topup.permutation(uncovered.size)]
        counts = [int(a.sum()) for a in asserted_per_target]
        rr = 0
        for pixel in order:
            placed = False
            for step in range(p.n_targets):
                cand = (rr + step) % p.n_targets
                if counts[cand] < n_pixels - 1:
                    asserted_per_target[cand][pixel] = True
                    counts[cand] += 1
                    covered[pixel] = True
                    rr = (cand + 1) % p.n_targets
                    placed = True
                    break
            if not placed:
                break  # every target is one fact short of complete
            if Fraction(int(covered.sum()), n_pixels) >= required:
                break
        if Fraction(int(covered.sum()), n_pixels) < required:
            raise InfeasibleCoverageError(
                f"cannot reach collective coverage {required} with "
                f"{p.n_targets} strictly partial targets over {n_pixels} pixels"
            )

    shape = reference.cells.shape
    targets = [
        PartialLabeling(
            np.where(a, ref_flat, np.int8(int(UNKNOWN))).astype(np.int8).reshape(shape)
        )
        for a in asserted_per_target
    ]
    return MiattSet(tuple(targets))


def inject_conflicts(m: MiattSet, n_flips: int, seed: int) -> MiattSet:
    """Flip facts at multi-determined pixels to manufacture a failing set.

    Each flip picks a distinct pixel determined by at least two targets and
    inverts the label in exactly one of them, so assessment of the result is
    guaranteed to report at least one conflict.
    """
    if n_flips < 1:
        raise ValueError("n_flips must be positive")
    report = assess_miatts(m)
    if not report.passed:
        raise ValueError("inject_conflicts requires a passing set")

    stacked = np.stack([t.flat() for t in m.targets])
    determined = stacked != int(UNKNOWN)
    multi = np.flatnonzero(determined.sum(axis=0) >= 2)
    if multi.size == 0:
        raise NoOverlapError("no pixel is determined by two or more targets")
    if n_flips > multi.size:
        raise ValueError(
            f"n_flips={n_flips} exceeds the {multi.size} multi-determined pixel(s)"
        )

    stream = SplitStream(seed).child(_TAG_FLIPS)
    pixels = multi[stream.choose(multi.size, n_flips)]
    flipped = stacked.copy()
    for px in pixels:
        owners = np.flatnonzero(determined[:, px])
        victim = int(owners[stream.integer(owners.size)])
        old = flipped[victim, px]
        flipped[victim, px] = int(NONOBJECT) if old == int(OBJECT) else int(OBJECT)

    shape = m.targets[0].cells.shape
    return MiattSet(tuple(PartialLabeling(row.reshape(shape)) for row in flipped))
