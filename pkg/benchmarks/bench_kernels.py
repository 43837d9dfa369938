"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both variants are called directly, so the UNBALBB84_DISABLE_NUMBA flag does
not matter here. The first numba call (compilation) is excluded.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from unbalbb84 import _kernels as K
from unbalbb84.fock import FockBasis, loss_coefficients
from unbalbb84.povm import bin_modes


def cases(rng):
    basis = FockBasis(8)
    n1, n2 = basis.occupations
    coef = loss_coefficients(basis.cutoff, 0.3)
    g = rng.normal(size=(basis.dim, basis.dim)) + 1j * rng.normal(size=(basis.dim, basis.dim))
    op = g + g.conj().T
    vconj = np.ascontiguousarray(bin_modes(0.77, 1).conj())
    masks = rng.integers(0, 16, size=200_000).astype(np.int64)
    uniforms = rng.random((masks.size, 6))

    def blocks(fn, n=10):
        return lambda: fn(vconj, n, np.zeros((16, n + 1, n + 1), dtype=np.complex128))

    return {
        "loss_adjoint_dense (cutoff 8)": (
            lambda: K.loss_adjoint_dense_numba(op, n1, n2, coef),
            lambda: K.loss_adjoint_dense_numpy(op, n1, n2, coef),
        ),
        "loss_forward_dense (cutoff 8)": (
            lambda: K.loss_forward_dense_numba(op, n1, n2, coef),
            lambda: K.loss_forward_dense_numpy(op, n1, n2, coef),
        ),
        "sector_pattern_blocks (n=10)": (blocks(K.sector_pattern_blocks_numba), blocks(K.sector_pattern_blocks_numpy)),
        "apply_window_flips (2e5 samples)": (
            lambda: K.apply_window_flips_numba(masks, uniforms, 0.05),
            lambda: K.apply_window_flips_numpy(masks, uniforms, 0.05),
        ),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"numba available: {K.HAVE_NUMBA}, active backend: {K.backend()}")
    print(f"{'kernel':36s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>8s}")
    for name, (fast, slow) in cases(rng).items():
        a, b = fast(), slow()
        if not np.allclose(a, b, atol=1e-12):
            raise SystemExit(f"{name}: variants disagree")
        t_fast = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:36s} {t_fast:12.3f} {t_slow:12.3f} {t_slow / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
