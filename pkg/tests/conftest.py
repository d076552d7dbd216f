import math

import numpy as np
import pytest

from levyasclt.levy import LevyModel, NormalJumps


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bm_model():
    return LevyModel(drift=0.0, gaussian_vol=1.0, jump_intensity=0.0)


@pytest.fixture
def jump_model():
    # sigma^2 = 0.25 + 1.5 * 0.5 = 1
    return LevyModel(drift=0.2, gaussian_vol=0.5, jump_intensity=1.5,
                     jumps=NormalJumps(0.0, math.sqrt(0.5)))


def triangular_family():
    """V_t = [[1+t, t], [0, 1+2t]]; kept out of the library because its
    log-det / A_t ratio converges too slowly to count as built in."""
    from levyasclt.normalization import CustomFamily

    return CustomFamily(
        V=lambda t: np.array([[1 + t, t], [0.0, 1 + 2 * t]]),
        dV=lambda t: np.array([[1.0, 1.0], [0.0, 2.0]]),
        a=lambda t: 1.0 / (1.0 + np.asarray(t, dtype=float)),
        A=lambda t: np.log1p(t),
        U=np.eye(2),
        label="triangular",
    )


@pytest.fixture
def triangular():
    return triangular_family()
