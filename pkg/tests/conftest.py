import math

import numpy as np
import pytest

from ndisk.geometry import Disc, ObstacleSet
from ndisk.orbits import build_db

# exact two-disk cycle data: head-on bounce, leg 4, curvature 1
LAMBDA_2DISK = 49.0 + 20.0 * math.sqrt(6.0)
T_2DISK = 8.0


@pytest.fixture(scope="session")
def two_disk():
    return ObstacleSet((Disc(np.array([0.0, 0.0]), 1.0),
                        Disc(np.array([6.0, 0.0]), 1.0)))


@pytest.fixture(scope="session")
def three_disk():
    side = 6.0
    return ObstacleSet((
        Disc(np.array([0.0, 0.0]), 1.0),
        Disc(np.array([side, 0.0]), 1.0),
        Disc(np.array([side / 2, side * math.sqrt(3.0) / 2]), 1.0),
    ))


@pytest.fixture(scope="session")
def two_disk_db(two_disk):
    return build_db(two_disk, max_len=6)


@pytest.fixture(scope="session")
def three_disk_db(three_disk):
    return build_db(three_disk, max_len=6)
