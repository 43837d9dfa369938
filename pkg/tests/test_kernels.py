import os
import subprocess
import sys

import numpy as np
import pytest

from unbalbb84 import _kernels as K
from unbalbb84.fock import FockBasis, loss_coefficients
from unbalbb84.povm import bin_modes

needs_numba = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture
def dense(rng):
    fb = FockBasis(6)
    g = rng.normal(size=(fb.dim, fb.dim)) + 1j * rng.normal(size=(fb.dim, fb.dim))
    n1, n2 = fb.occupations
    return g + g.conj().T, n1, n2, loss_coefficients(6, 0.35)


@needs_numba
def test_loss_kernels_agree(dense):
    op, n1, n2, coef = dense
    assert np.allclose(K.loss_adjoint_dense_numba(op, n1, n2, coef), K.loss_adjoint_dense_numpy(op, n1, n2, coef), atol=1e-13)
    assert np.allclose(K.loss_forward_dense_numba(op, n1, n2, coef), K.loss_forward_dense_numpy(op, n1, n2, coef), atol=1e-13)


@needs_numba
@pytest.mark.parametrize("n", [0, 1, 4, 7])
@pytest.mark.parametrize("xi, basis", [(0.5, 0), (0.77, 1)])
def test_pattern_blocks_agree(n, xi, basis):
    vconj = np.ascontiguousarray(bin_modes(xi, basis).conj())
    a = np.zeros((16, n + 1, n + 1), dtype=np.complex128)
    b = np.zeros_like(a)
    K.sector_pattern_blocks_numba(vconj, n, a)
    K.sector_pattern_blocks_numpy(vconj, n, b)
    assert np.allclose(a, b, atol=1e-13)
    assert np.allclose(a.sum(axis=0), np.eye(n + 1), atol=1e-12)


@needs_numba
def test_window_flips_agree(rng):
    masks = rng.integers(0, 16, size=5000).astype(np.int64)
    u = rng.random((5000, 6))
    assert np.array_equal(K.apply_window_flips_numba(masks, u, 0.2), K.apply_window_flips_numpy(masks, u, 0.2))
    assert np.array_equal(K.apply_window_flips_numpy(masks, u, 0.0), masks)


def test_backend_matches_flag():
    assert K.backend() == ("numba" if K.USE_NUMBA else "numpy")


def test_disable_flag_selects_numpy():
    env = dict(os.environ, UNBALBB84_DISABLE_NUMBA="1")
    code = (
        "from unbalbb84 import _kernels as K;"
        "from unbalbb84.verify import run_verify;"
        "print(K.backend());"
        "print(all(r.passed for r in run_verify(names=['povm completeness', 'dark-count post-processing formulas'])))"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
