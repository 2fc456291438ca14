import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from relaychain.world import GridMap


def bordered(height, width, resolution=1.0):
    """Empty map with a one-cell wall border."""
    walls = np.zeros((height, width), np.uint8)
    walls[0, :] = walls[-1, :] = 1
    walls[:, 0] = walls[:, -1] = 1
    return GridMap(walls, resolution=resolution)


def random_map(rng, height=100, width=100, density=0.3, keep_free=()):
    """Random obstacle map; keep_free cells are forced free."""
    walls = (rng.random((height, width)) < density).astype(np.uint8)
    walls[0, :] = walls[-1, :] = 1
    walls[:, 0] = walls[:, -1] = 1
    for x, y in keep_free:
        walls[y, x] = 0
    return GridMap(walls)


@pytest.fixture
def empty10():
    return bordered(10, 10)


@pytest.fixture
def empty100():
    return bordered(100, 100)
