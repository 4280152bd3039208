import numpy as np
import pytest

from c2f_codec import C2FConfig
from denoiser import DenoiserArch
from volume_io import Centerline, Volume


class OracleDenoiser:
    """Always predicts the same clean matrix, whatever the input"""

    def __init__(self, v0):
        self.v0 = np.asarray(v0, dtype=np.float64)
        self.shape = self.v0.shape

    def condition(self, volume):
        return None

    def denoise(self, v_t, cond, t):
        return self.v0


@pytest.fixture
def tiny_codec():
    # B=2 bits per axis, d=10
    return C2FConfig(grid=(4, 4, 4), max_len=4)


@pytest.fixture
def tiny_arch():
    return DenoiserArch(dims=(4, 4, 4), max_len=4, width=10, hidden_dim=8, time_dim=4, n_heads=2,
                        ff_dim=8, pool_size=2)


@pytest.fixture
def oracle_factory():
    return OracleDenoiser


def random_centerline(rng, dims, max_points):
    n = int(rng.integers(0, max_points + 1))
    pts = np.stack([rng.integers(0, d, size=n) for d in dims], axis=1) if n else np.zeros((0, 3))
    return Centerline(pts.astype(np.int64))


@pytest.fixture
def centerline_factory():
    return random_centerline


@pytest.fixture
def small_volume():
    rng = np.random.default_rng(3)
    return Volume(rng.normal(size=(4, 4, 4)))
