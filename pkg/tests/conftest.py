import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_image(rng, h=32, w=32, c=3):
    return rng.uniform(0.0, 1.0, (h, w, c)).astype(np.float32)


def checker_image(h=32, w=32, cell=4):
    yy, xx = np.mgrid[0:h, 0:w]
    pattern = (((yy // cell) + (xx // cell)) % 2).astype(np.float32)
    return np.stack([pattern] * 3, axis=-1)
