import numpy as np
import pytest

from miatt_forge import MiattSet, PartialLabeling

# The 4x4 worked pair used across core/laf tests:
#   t1 asserts Object at pixels 0,1 and NonObject at 15
#   t2 asserts Object at pixels 4,5 and NonObject at 10,15
# Union determines {0,1,4,5,10,15}; the sets agree at pixel 15.


@pytest.fixture
def worked_pair() -> MiattSet:
    t1 = PartialLabeling.from_rows(["OOUU", "UUUU", "UUUU", "UUUN"])
    t2 = PartialLabeling.from_rows(["UUUU", "OOUU", "UUNU", "UUUN"])
    return MiattSet((t1, t2))


@pytest.fixture
def conflicted_pair() -> MiattSet:
    # same as worked_pair but t2 contradicts t1 at pixel 0
    t1 = PartialLabeling.from_rows(["OOUU", "UUUU", "UUUU", "UUUN"])
    t2 = PartialLabeling.from_rows(["NUUU", "OOUU", "UUNU", "UUUN"])
    return MiattSet((t1, t2))


def random_partial_labeling(rng: np.random.Generator, width: int, height: int) -> PartialLabeling:
    return PartialLabeling(rng.integers(0, 3, size=(height, width), dtype=np.int8))


def random_consistent_set(
    rng: np.random.Generator, width: int, height: int, n_targets: int
) -> MiattSet:
    """Random passing MIATT set: strict sub-maskings of one random full labeling."""
    full = rng.integers(1, 3, size=height * width, dtype=np.int8)
    targets = []
    for _ in range(n_targets):
        keep = rng.random(height * width) < rng.uniform(0.2, 0.8)
        if keep.all():  # keep it strictly partial
            keep[rng.integers(0, keep.size)] = False
        cells = np.where(keep, full, np.int8(0))
        targets.append(PartialLabeling(cells.reshape(height, width)))
    return MiattSet(tuple(targets))
