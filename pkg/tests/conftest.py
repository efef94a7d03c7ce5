import random
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sifkit.depth import DepthMap
from sifkit.geometry import BBox, BoxSet


def random_milli_box(rng: random.Random, min_side: int = 10, max_side: int = 600) -> BBox:
    """Box with 3-decimal coordinates, sides in [min_side, max_side] millis."""
    w = rng.randint(min_side, max_side)
    h = rng.randint(min_side, max_side)
    x1 = rng.randint(0, 1000 - w)
    y1 = rng.randint(0, 1000 - h)
    return BBox(x1 / 1000, y1 / 1000, (x1 + w) / 1000, (y1 + h) / 1000)


def random_boxset(rng: random.Random, max_boxes: int = 5, **kw) -> BoxSet:
    n = rng.randint(1, max_boxes)
    return BoxSet(tuple(random_milli_box(rng, **kw) for _ in range(n)))


@pytest.fixture
def flat_depth() -> DepthMap:
    return DepthMap(width=8, height=8, values=np.full((8, 8), 0.5))


@pytest.fixture
def split_depth() -> DepthMap:
    """Left half 0.2, right half 0.8."""
    values = np.full((4, 4), 0.8)
    values[:, :2] = 0.2
    return DepthMap(width=4, height=4, values=values)
