import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from objsplat.scene import GaussianStore, look_at_camera


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def random_store(rng, count, dtype=torch.float64, spread=0.5, ids=None):
    if ids is None:
        ids = np.zeros((count, 3), np.int64)
    return GaussianStore.from_arrays(
        means=rng.normal(0, spread, (count, 3)),
        rotations=rng.normal(0, 1, (count, 4)),
        log_scales=rng.uniform(-3.2, -1.6, (count, 3)),
        opacities=rng.uniform(-1.0, 2.0, count),
        colors=rng.random((count, 3)),
        object_ids=ids,
        dtype=dtype,
    )


def simple_camera(width=16, height=16, fx=30.0, distance=4.0, frame_index=0, time=0.0):
    return look_at_camera([0, 0, -distance], [0, 0, 0], fx=fx, fy=fx, width=width,
                          height=height, frame_index=frame_index, time=time)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
