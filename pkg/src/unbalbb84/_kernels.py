"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature. The module-level
names (``loss_adjoint_dense`` etc.) point at the numba versions unless the
environment variable ``UNBALBB84_DISABLE_NUMBA`` is set to a truthy value or
numba cannot be imported, in which case they point at the numpy versions.
Both variants stay importable as ``*_numba`` / ``*_numpy`` so tests and the
benchmark can compare them directly.
"""

from __future__ import annotations

import os
from math import lgamma

import numpy as np

_FLAG = os.environ.get("UNBALBB84_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED

# Bit layout of a per-basis click pattern over the four effective bins.
BIT_T1, BIT_D2, BIT_D5, BIT_T3 = 1, 2, 4, 8


def _njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


# ---------------------------------------------------------------------------
# loss channel on a dense two-mode operator
# ---------------------------------------------------------------------------


def _flat_index(n1, n2):
    n = n1 + n2
    return n * (n + 1) // 2 + n2


def loss_adjoint_dense_numpy(op, n1, n2, coef):
    dim = op.shape[0]
    cutoff = coef.shape[0] - 1
    out = np.zeros((dim, dim), dtype=np.complex128)
    for l1 in range(cutoff + 1):
        for l2 in range(cutoff + 1 - l1):
            ok = (n1 >= l1) & (n2 >= l2)
            if not ok.any():
                continue
            m1 = np.where(ok, n1 - l1, 0)
            m2 = np.where(ok, n2 - l2, 0)
            w = np.where(ok, coef[n1, l1] * coef[n2, l2], 0.0)
            src = _flat_index(m1, m2)
            out += np.outer(w, w) * op[np.ix_(src, src)]
    return out


def loss_forward_dense_numpy(rho, n1, n2, coef):
    dim = rho.shape[0]
    cutoff = coef.shape[0] - 1
    out = np.zeros((dim, dim), dtype=np.complex128)
    for l1 in range(cutoff + 1):
        for l2 in range(cutoff + 1 - l1):
            ok = (n1 >= l1) & (n2 >= l2)
            if not ok.any():
                continue
            sel = np.nonzero(ok)[0]
            w = coef[n1[sel], l1] * coef[n2[sel], l2]
            dst = _flat_index(n1[sel] - l1, n2[sel] - l2)
            block = np.outer(w, w) * rho[np.ix_(sel, sel)]
            np.add.at(out, (dst[:, None], dst[None, :]), block)
    return out


def _loss_adjoint_dense_loop(op, n1, n2, coef):
    dim = op.shape[0]
    out = np.zeros((dim, dim), dtype=np.complex128)
    for p in range(dim):
        a1 = n1[p]
        a2 = n2[p]
        for q in range(dim):
            b1 = n1[q]
            b2 = n2[q]
            acc = 0j
            for l1 in range(min(a1, b1) + 1):
                w1 = coef[a1, l1] * coef[b1, l1]
                for l2 in range(min(a2, b2) + 1):
                    s = (a1 - l1) + (a2 - l2)
                    src_p = s * (s + 1) // 2 + (a2 - l2)
                    t = (b1 - l1) + (b2 - l2)
                    src_q = t * (t + 1) // 2 + (b2 - l2)
                    acc += w1 * coef[a2, l2] * coef[b2, l2] * op[src_p, src_q]
            out[p, q] = acc
    return out


def _loss_forward_dense_loop(rho, n1, n2, coef):
    dim = rho.shape[0]
    out = np.zeros((dim, dim), dtype=np.complex128)
    for p in range(dim):
        a1 = n1[p]
        a2 = n2[p]
        for q in range(dim):
            val = rho[p, q]
            if val == 0:
                continue
            b1 = n1[q]
            b2 = n2[q]
            for l1 in range(min(a1, b1) + 1):
                w1 = coef[a1, l1] * coef[b1, l1]
                for l2 in range(min(a2, b2) + 1):
                    s = (a1 - l1) + (a2 - l2)
                    dp = s * (s + 1) // 2 + (a2 - l2)
                    t = (b1 - l1) + (b2 - l2)
                    dq = t * (t + 1) // 2 + (b2 - l2)
                    out[dp, dq] += w1 * coef[a2, l2] * coef[b2, l2] * val
    return out


# ---------------------------------------------------------------------------
# click-pattern POVM blocks for one photon-number sector
# ---------------------------------------------------------------------------


def _sector_pattern_blocks_loop(vconj, n, out):
    """Accumulate |beta_m><beta_m| into out[mask(m)] for all 4-part compositions m of n.

    ``vconj[i, j]`` is the coefficient of a_j^dagger in b_i^dagger.
    """
    dim = n + 1
    log_fact = np.empty(n + 1)
    for k in range(n + 1):
        log_fact[k] = lgamma(k + 1.0)
    # powers[i, m, k]: coefficient of u^(m-k) v^k in (vconj[i,0] u + vconj[i,1] v)^m / sqrt(m!)
    powers = np.zeros((4, n + 1, n + 1), dtype=np.complex128)
    for i in range(4):
        for m in range(n + 1):
            for k in range(m + 1):
                lc = log_fact[m] - log_fact[k] - log_fact[m - k] - 0.5 * log_fact[m]
                powers[i, m, k] = np.exp(lc) * vconj[i, 0] ** (m - k) * vconj[i, 1] ** k
    scale = np.empty(dim)
    for k in range(dim):
        scale[k] = np.exp(0.5 * (log_fact[n - k] + log_fact[k]))
    poly = np.zeros(dim, dtype=np.complex128)
    tmp = np.zeros(dim, dtype=np.complex128)
    for m0 in range(n + 1):
        for m1 in range(n - m0 + 1):
            for m2 in range(n - m0 - m1 + 1):
                m3 = n - m0 - m1 - m2
                mask = 0
                if m0 > 0:
                    mask |= 1
                if m1 > 0:
                    mask |= 2
                if m2 > 0:
                    mask |= 4
                if m3 > 0:
                    mask |= 8
                # poly = product of the four single-mode polynomials
                for k in range(dim):
                    poly[k] = 0.0
                for k in range(m0 + 1):
                    poly[k] = powers[0, m0, k]
                deg = m0
                for i, mi in ((1, m1), (2, m2), (3, m3)):
                    if mi == 0:
                        continue
                    for k in range(deg + mi + 1):
                        tmp[k] = 0.0
                    for a in range(deg + 1):
                        pa = poly[a]
                        if pa == 0:
                            continue
                        for b in range(mi + 1):
                            tmp[a + b] += pa * powers[i, mi, b]
                    deg += mi
                    for k in range(deg + 1):
                        poly[k] = tmp[k]
                for p in range(dim):
                    bp = poly[p] * scale[p]
                    if bp == 0:
                        continue
                    for q in range(dim):
                        out[mask, p, q] += bp * np.conj(poly[q] * scale[q])
    return out


def sector_pattern_blocks_numpy(vconj, n, out):
    from itertools import product as iproduct
    from math import comb, factorial

    dim = n + 1
    powers = np.zeros((4, n + 1, n + 1), dtype=np.complex128)
    for i in range(4):
        for m in range(n + 1):
            k = np.arange(m + 1)
            binom = np.array([comb(m, int(j)) for j in k], dtype=float)
            powers[i, m, : m + 1] = (
                binom * vconj[i, 0] ** (m - k) * vconj[i, 1] ** k / np.sqrt(factorial(m))
            )
    scale = np.sqrt([factorial(n - k) * factorial(k) for k in range(dim)]).astype(float)
    for m0, m1, m2 in iproduct(range(n + 1), repeat=3):
        m3 = n - m0 - m1 - m2
        if m3 < 0:
            continue
        poly = powers[0, m0, : m0 + 1]
        for i, mi in ((1, m1), (2, m2), (3, m3)):
            poly = np.convolve(poly, powers[i, mi, : mi + 1])
        mask = (m0 > 0) * 1 + (m1 > 0) * 2 + (m2 > 0) * 4 + (m3 > 0) * 8
        vec = poly * scale
        out[mask] += np.outer(vec, vec.conj())
    return out


# ---------------------------------------------------------------------------
# dark-count Monte Carlo: per-window flips of ideal click patterns
# ---------------------------------------------------------------------------

# window -> bin bit; t1 and t3 each merge two physical windows.
WINDOW_BITS = np.array([BIT_T1, BIT_T1, BIT_D2, BIT_D5, BIT_T3, BIT_T3], dtype=np.int64)


def apply_window_flips_numpy(masks, uniforms, p_d):
    flips = uniforms < p_d
    out = masks.copy()
    for w in range(WINDOW_BITS.size):
        out |= np.where(flips[:, w], WINDOW_BITS[w], 0)
    return out


def _apply_window_flips_loop(masks, uniforms, p_d):
    out = masks.copy()
    for s in range(masks.size):
        m = masks[s]
        for w in range(6):
            if uniforms[s, w] < p_d:
                m |= WINDOW_BITS[w]
        out[s] = m
    return out


if HAVE_NUMBA:
    _WB = WINDOW_BITS

    @numba.njit(cache=True)
    def _apply_window_flips_nb(masks, uniforms, p_d):
        out = masks.copy()
        for s in range(masks.size):
            m = masks[s]
            for w in range(6):
                if uniforms[s, w] < p_d:
                    m |= _WB[w]
            out[s] = m
        return out

    loss_adjoint_dense_numba = _njit(_loss_adjoint_dense_loop)
    loss_forward_dense_numba = _njit(_loss_forward_dense_loop)
    sector_pattern_blocks_numba = _njit(_sector_pattern_blocks_loop)
    apply_window_flips_numba = _apply_window_flips_nb
else:  # pragma: no cover
    loss_adjoint_dense_numba = loss_adjoint_dense_numpy
    loss_forward_dense_numba = loss_forward_dense_numpy
    sector_pattern_blocks_numba = sector_pattern_blocks_numpy
    apply_window_flips_numba = apply_window_flips_numpy


if USE_NUMBA:
    loss_adjoint_dense = loss_adjoint_dense_numba
    loss_forward_dense = loss_forward_dense_numba
    sector_pattern_blocks = sector_pattern_blocks_numba
    apply_window_flips = apply_window_flips_numba
else:
    loss_adjoint_dense = loss_adjoint_dense_numpy
    loss_forward_dense = loss_forward_dense_numpy
    sector_pattern_blocks = sector_pattern_blocks_numpy
    apply_window_flips = apply_window_flips_numpy


def backend() -> str:
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"
