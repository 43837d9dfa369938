"""Independent reference computations used by the tests and the verify suite.

Each function here recomputes something the library already does, by a
route that shares as little code as possible with the production path:
closed-form dark-count formulas, explicit ladder-operator algebra, Monte
Carlo sampling, dense Kraus maps.
"""

from __future__ import annotations

from math import factorial

import numpy as np

from ._kernels import BIT_D2, BIT_D5, BIT_T1, BIT_T3, apply_window_flips
from .fock import FockBasis
from .optimize import D_A, ConstraintSet, GZMaps, ReducedState
from .povm import LABELS, N_OUTCOMES, PovmSet, label_for

LN2 = np.log(2.0)


def creation_monomial_oracle(c1: complex, c2: complex, n: int, basis: FockBasis) -> np.ndarray:
    """(c1 a1^dag + c2 a2^dag)^n |0,0> / sqrt(n!) built from explicit matrices."""
    a1 = basis.annihilation(0)
    a2 = basis.annihilation(1)
    op = c1 * a1.T + c2 * a2.T
    vec = basis.ket(0, 0)
    for _ in range(n):
        vec = op @ vec
    return vec / np.sqrt(factorial(n))


# ---------------------------------------------------------------------------
# closed-form dark-count post-processing
# ---------------------------------------------------------------------------

# element names, per basis where the outcome depends on it
ELEMENT_MASKS = {
    "0": 0,
    "t1": BIT_T1,
    "t3": BIT_T3,
    "2": BIT_D2,
    "5": BIT_D5,
    "t1t3": BIT_T1 | BIT_T3,
    "25": BIT_D2 | BIT_D5,
}


def _per_basis(ideal: PovmSet, n: int, basis: int, name: str) -> np.ndarray:
    """F^basis_name on sector n; basis-independent labels are split by the basis probability."""
    mask = ELEMENT_MASKS[name]
    k = label_for(basis, mask)
    blk = ideal.blocks[n][k]
    return blk * ideal.basis_probs[basis] if LABELS[k].basis is None else blk


def formula_elements(ideal: PovmSet, p_d: float, n: int, basis: int) -> dict[str, np.ndarray]:
    """Post-processed elements P^basis on sector n from the closed forms."""
    q = 1.0 - p_d
    d2 = 1.0 - q**2  # a two-window outside bin fires in the dark
    f = {name: _per_basis(ideal, n, basis, name) for name in ELEMENT_MASKS}
    return {
        "0": q**6 * f["0"],
        "t1": q**4 * (f["t1"] + d2 * f["0"]),
        "t3": q**4 * (f["t3"] + d2 * f["0"]),
        "2": q**5 * (f["2"] + p_d * f["0"]),
        "5": q**5 * (f["5"] + p_d * f["0"]),
        "t1t3": q**2 * (f["t1t3"] + d2 * (f["t1"] + f["t3"]) + d2**2 * f["0"]),
        "25": q**4 * (f["25"] + p_d * (f["2"] + f["5"]) + p_d**2 * f["0"]),
    }


def library_elements(processed: PovmSet, n: int, basis: int) -> dict[str, np.ndarray]:
    """The same seven elements read off a post-processed POVM, split per basis."""
    return {name: _per_basis(processed, n, basis, name) for name in ELEMENT_MASKS}


def cross_click_formula(n: int, xi: float, p_d: float) -> np.ndarray:
    """Diagonal of P_cc on sector n, entry k for |n-k, k>."""
    q = 1.0 - p_d
    if n == 0:
        return np.array([1.0 - q**2 * (1.0 + p_d * q**2 * (2.0 - p_d))])
    i = n - np.arange(n + 1)
    return 1.0 - q**2 * xi**i * (1.0 - xi) ** (n - i) - q**4 * xi ** (n - i) * (1.0 - xi) ** i


# ---------------------------------------------------------------------------
# Monte Carlo dark counts
# ---------------------------------------------------------------------------


def monte_carlo_postprocess(p_d: float, samples: int, rng: np.random.Generator, basis_probs=(0.5, 0.5)) -> np.ndarray:
    """Column-stochastic estimate of the dark-count map by flipping detection windows at random."""
    mat = np.zeros((N_OUTCOMES, N_OUTCOMES))
    for i, lab in enumerate(LABELS):
        if lab.basis is None:
            bases = rng.choice(2, size=samples, p=list(basis_probs))
        else:
            bases = np.full(samples, lab.basis)
        masks = np.full(samples, lab.mask, dtype=np.int64)
        out = apply_window_flips(masks, rng.random((samples, 6)), p_d)
        for b in (0, 1):
            sel = bases == b
            if not sel.any():
                continue
            dst, cnt = np.unique(out[sel], return_counts=True)
            for m, c in zip(dst, cnt):
                mat[label_for(b, int(m)), i] += c
    return mat / samples


# ---------------------------------------------------------------------------
# dense objective
# ---------------------------------------------------------------------------


def _entropy_nats(mat: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    lam = lam[lam > 0]
    return float(-np.sum(lam * np.log(lam)))


def monolithic_objective(state: ReducedState, gz: GZMaps, epsilon: float = 0.0) -> float:
    """D(G_eps(rho) || Z(G_eps(rho))) in bits with full matrices and explicit Kraus operators."""
    rho = state.assemble()
    out = sum(k @ rho @ k.conj().T for k in gz.kraus())
    d = out.shape[0]
    out = (1 - epsilon) * out + epsilon / d * np.eye(d)
    h = d // 2
    pinched = np.zeros_like(out)
    pinched[:h, :h] = out[:h, :h]
    pinched[h:, h:] = out[h:, h:]
    # D(s || Z s) = S(Z s) - S(s) because Z is a pinching
    return (_entropy_nats(pinched) - _entropy_nats(out)) / LN2


def random_state(t: int, n_flags: int, rng: np.random.Generator, rank: int | None = None) -> ReducedState:
    """Random normalised state in the squashed block form."""
    d = D_A * t
    r = d if rank is None else rank
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    low = g @ g.conj().T
    f = rng.normal(size=(n_flags, D_A, D_A)) + 1j * rng.normal(size=(n_flags, D_A, D_A))
    flags = f @ f.conj().transpose(0, 2, 1)
    st = ReducedState(low, flags)
    return st.scale(1.0 / st.trace())


def random_hermitian_like(t: int, n_flags: int, rng: np.random.Generator) -> ReducedState:
    d = D_A * t
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    f = rng.normal(size=(n_flags, D_A, D_A)) + 1j * rng.normal(size=(n_flags, D_A, D_A))
    return ReducedState(g, f).hermitian()


# ---------------------------------------------------------------------------
# toy with a single feasible point
# ---------------------------------------------------------------------------


def _hermitian_basis(d: int) -> np.ndarray:
    mats = []
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d), dtype=np.complex128)
            if i == j:
                e[i, i] = 1.0
                mats.append(e)
            else:
                e[i, j] = e[j, i] = 1.0
                mats.append(e)
                a = np.zeros((d, d), dtype=np.complex128)
                a[i, j], a[j, i] = 1j, -1j
                mats.append(a)
    return np.array(mats)


def singleton_constraints(state: ReducedState) -> ConstraintSet:
    """Tomographically complete equalities whose only solution is ``state``."""
    t, m = state.t, state.n_flags
    lows, flags = [], []
    for op in _hermitian_basis(D_A * t):
        lows.append(op)
        flags.append(np.zeros((m, D_A, D_A), dtype=np.complex128))
    for k in range(m):
        for op in _hermitian_basis(D_A):
            lows.append(np.zeros((D_A * t, D_A * t), dtype=np.complex128))
            f = np.zeros((m, D_A, D_A), dtype=np.complex128)
            f[k] = op
            flags.append(f)
    eq_low, eq_flag = np.array(lows), np.array(flags)
    cs = ConstraintSet(
        eq_low,
        eq_flag,
        np.zeros(len(lows)),
        tuple(["tomography"] * len(lows)),
        np.zeros((0, D_A * t, D_A * t), dtype=np.complex128),
        np.zeros((0, m, D_A, D_A), dtype=np.complex128),
        np.zeros(0),
        alice_marginal=(state.rho_low.reshape(D_A, t, D_A, t).trace(axis1=1, axis2=3) + state.flags.sum(axis=0)),
    )
    cs.eq_target[:] = cs.eq_values(state)
    return cs
