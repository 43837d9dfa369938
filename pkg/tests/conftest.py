import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


XIS = (0.5, 0.55, 0.77, 0.91)


def kappa_of(xi):
    return 1.0 / xi - 1.0
