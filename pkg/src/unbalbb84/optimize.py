"""Privacy-amplification term: reduced state, constraints, objective, solvers.

The optimisation variable lives on A (4 signals) tensor Bob's squashed space
(low-photon block of dimension T plus 28 one-dimensional flags). Without loss
of generality the state is block diagonal in that decomposition, so it is
stored as one 4T x 4T block and 28 Alice-side 4 x 4 blocks.

All logarithms are natural inside this module; values returned by
``objective``, ``gradient`` and the bound routines are in bits.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from math import log

import numpy as np
from scipy.optimize import minimize_scalar

from . import sdp
from .fock import DomainError
from .simulate import KEPT
from .source import N_SIGNALS, SignalSettings, alice_reduced_matrix
from .squash import SquashedPovm, SubspaceBound

D_A = N_SIGNALS
LN2 = log(2.0)
EPS_LADDER = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)
EIG_FLOOR = 1e-14
NEG_TOL = 1e-9  # tolerated negative eigenvalue of an unperturbed block
FEAS_TOL = 1e-8
RANK_TOL = 1e-10
ZERO_TARGET = 1e-10
THIN_TARGET = 1e-4
WEIGHT_FLOOR = 1e-14
MARGINAL_WEIGHT = 1e10
FACE_WEIGHT_TOL = 1e-9  # largest weight a feasible state may lose to a dropped direction
FACE_CUT_FLOOR = 1e-10


class InfeasibleError(RuntimeError):
    """Constraint set is empty; ``radius`` is the phase-1 optimum (smallest uniform violation)."""

    def __init__(self, radius: float, message: str = ""):
        super().__init__(message or f"constraints infeasible, minimal violation {radius:.3e}")
        self.radius = radius


class NumericalDegeneracyError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# reduced state
# ---------------------------------------------------------------------------


@dataclass
class ReducedState:
    """Block-diagonal Hermitian operator on A (x) (low (+) flags).

    Used for states as well as for gradients and constraint operators.
    ``rho_low`` is indexed x*T + b; ``flags[k]`` is the Alice matrix c^k.
    """

    rho_low: np.ndarray
    flags: np.ndarray

    @property
    def t(self) -> int:
        return self.rho_low.shape[0] // D_A

    @property
    def n_flags(self) -> int:
        return self.flags.shape[0]

    @property
    def c_diag(self) -> np.ndarray:
        return np.real(np.diagonal(self.flags, axis1=1, axis2=2)).ravel()

    @property
    def c_off(self) -> np.ndarray:
        iu = np.triu_indices(D_A, 1)
        return self.flags[:, iu[0], iu[1]].ravel()

    @property
    def n_params(self) -> int:
        return (D_A * self.t) ** 2 + D_A**2 * self.n_flags

    @classmethod
    def from_parameters(cls, rho_low: np.ndarray, c_diag: np.ndarray, c_off: np.ndarray) -> "ReducedState":
        m = c_diag.size // D_A
        flags = np.zeros((m, D_A, D_A), dtype=np.complex128)
        d = np.asarray(c_diag).reshape(m, D_A)
        flags[:, np.arange(D_A), np.arange(D_A)] = d
        iu = np.triu_indices(D_A, 1)
        off = np.asarray(c_off).reshape(m, -1)
        flags[:, iu[0], iu[1]] = off
        flags[:, iu[1], iu[0]] = off.conj()
        return cls(np.asarray(rho_low, dtype=np.complex128), flags)

    @classmethod
    def zeros(cls, t: int, n_flags: int) -> "ReducedState":
        return cls(
            np.zeros((D_A * t, D_A * t), dtype=np.complex128),
            np.zeros((n_flags, D_A, D_A), dtype=np.complex128),
        )

    def __add__(self, other: "ReducedState") -> "ReducedState":
        return ReducedState(self.rho_low + other.rho_low, self.flags + other.flags)

    def __sub__(self, other: "ReducedState") -> "ReducedState":
        return ReducedState(self.rho_low - other.rho_low, self.flags - other.flags)

    def scale(self, a: float) -> "ReducedState":
        return ReducedState(a * self.rho_low, a * self.flags)

    def inner(self, other: "ReducedState") -> float:
        """Re Tr(self other) for Hermitian operands."""
        return float(np.real(np.vdot(self.rho_low, other.rho_low) + np.vdot(self.flags, other.flags)))

    def trace(self) -> float:
        return float(np.real(np.trace(self.rho_low) + np.trace(self.flags, axis1=1, axis2=2).sum()))

    def hermitian(self) -> "ReducedState":
        return ReducedState(
            0.5 * (self.rho_low + self.rho_low.conj().T),
            0.5 * (self.flags + self.flags.conj().transpose(0, 2, 1)),
        )

    def min_eigenvalue(self) -> float:
        lo = np.linalg.eigvalsh(self.rho_low).min()
        return float(min(lo, np.linalg.eigvalsh(self.flags).min()))

    def assemble(self) -> np.ndarray:
        """Full matrix on A (x) B_sq, Alice index outermost, Bob = low (+) flags."""
        t, m = self.t, self.n_flags
        db = t + m
        out = np.zeros((D_A * db, D_A * db), dtype=np.complex128)
        for x in range(D_A):
            for y in range(D_A):
                out[x * db : x * db + t, y * db : y * db + t] = self.rho_low[x * t : (x + 1) * t, y * t : (y + 1) * t]
                out[x * db + t + np.arange(m), y * db + t + np.arange(m)] = self.flags[:, x, y]
        return out


def embed_state(rho_ab: np.ndarray, t: int, n_flags: int) -> ReducedState:
    """Place a state on A (x) Fock(<= n) into the low block of dimension T >= dim Fock(<= n)."""
    d = rho_ab.shape[0] // D_A
    if d > t:
        raise DomainError("state does not fit into the low block")
    low = np.zeros((D_A * t, D_A * t), dtype=np.complex128)
    for x in range(D_A):
        for y in range(D_A):
            low[x * t : x * t + d, y * t : y * t + d] = rho_ab[x * d : (x + 1) * d, y * d : (y + 1) * d]
    return ReducedState(low, np.zeros((n_flags, D_A, D_A), dtype=np.complex128))


def _unit(i: int, j: int) -> np.ndarray:
    e = np.zeros((D_A, D_A), dtype=np.complex128)
    e[i, j] = 1.0
    return e


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------


@dataclass
class ConstraintSet:
    """Equalities Tr(G rho) = g (relaxed to |.| <= radius except the trace) and inequalities Tr(G rho) >= g."""

    eq_low: np.ndarray
    eq_flag: np.ndarray
    eq_target: np.ndarray
    eq_kind: tuple[str, ...]
    ineq_low: np.ndarray
    ineq_flag: np.ndarray
    ineq_target: np.ndarray
    alice_marginal: np.ndarray = field(default_factory=lambda: np.eye(D_A) / D_A)
    n_tilde: int = 0
    radius: float = 0.0

    @property
    def t(self) -> int:
        return self.eq_low.shape[1] // D_A

    @property
    def n_flags(self) -> int:
        return self.eq_flag.shape[1]

    @property
    def n_eq(self) -> int:
        return self.eq_target.size

    @property
    def n_ineq(self) -> int:
        return self.ineq_target.size

    def __len__(self) -> int:
        return self.n_eq + self.n_ineq

    @property
    def relaxable(self) -> np.ndarray:
        return np.array([k != "trace" for k in self.eq_kind])

    def eq_operator(self, i: int) -> ReducedState:
        return ReducedState(self.eq_low[i], self.eq_flag[i])

    def ineq_operator(self, i: int) -> ReducedState:
        return ReducedState(self.ineq_low[i], self.ineq_flag[i])

    def eq_values(self, state: ReducedState) -> np.ndarray:
        m = self.n_eq
        return np.real(
            self.eq_low.reshape(m, -1).conj() @ state.rho_low.ravel()
            + self.eq_flag.reshape(m, -1).conj() @ state.flags.ravel()
        )

    def ineq_values(self, state: ReducedState) -> np.ndarray:
        m = self.n_ineq
        return np.real(
            self.ineq_low.reshape(m, state.rho_low.size).conj() @ state.rho_low.ravel()
            + self.ineq_flag.reshape(m, state.flags.size).conj() @ state.flags.ravel()
        )

    def violation(self, state: ReducedState) -> float:
        """Largest violation beyond the relaxation radius, including negative eigenvalues."""
        dev = np.abs(self.eq_values(state) - self.eq_target)
        dev = np.where(self.relaxable, np.maximum(dev - self.radius, 0.0), dev)
        short = np.maximum(self.ineq_target - self.ineq_values(state), 0.0)
        return float(max(dev.max(initial=0.0), short.max(initial=0.0), -state.min_eigenvalue(), 0.0))

    @cached_property
    def face(self) -> "Face":
        return find_face(self)


def build_constraints(
    n_tilde: int,
    cond_probs: np.ndarray,
    squashed: SquashedPovm,
    bounds: list[SubspaceBound] | np.ndarray,
    settings: SignalSettings,
) -> ConstraintSet:
    if n_tilde > squashed.n_b:
        raise DomainError(f"n~={n_tilde} exceeds the flag cutoff {squashed.n_b}")
    t = squashed.low_dim
    m_out = squashed.n_outcomes
    eye_t = np.eye(t)
    px = np.asarray(settings.signal_probs)
    lows, flags, targets, kinds = [], [], [], []

    def add(low, flag, target, kind):
        lows.append(low)
        flags.append(flag)
        targets.append(target)
        kinds.append(kind)

    for x in range(D_A):
        exx = _unit(x, x)
        for k in range(m_out):
            flag = np.zeros((m_out, D_A, D_A), dtype=np.complex128)
            flag[k] = exx
            add(np.kron(exx, squashed.low[k]), flag, float(cond_probs[x, k]), "prob")

    marg = alice_reduced_matrix(n_tilde, settings)
    for x in range(D_A):
        for y in range(x, D_A):
            if x == y:
                ops = [(_unit(x, x), np.real(marg[x, x]))]
            else:
                herm = _unit(x, y) + _unit(y, x)
                anti = 1j * (_unit(x, y) - _unit(y, x))
                ops = [(herm, 2.0 * np.real(marg[x, y])), (anti, 2.0 * np.imag(marg[x, y]))]
            for a, target in ops:
                add(np.kron(a, eye_t), np.broadcast_to(a, (m_out, D_A, D_A)).copy(), float(target), "marginal")

    add(np.eye(D_A * t, dtype=np.complex128), np.broadcast_to(np.eye(D_A), (m_out, D_A, D_A)).astype(complex), 1.0, "trace")

    b = np.array([float(bb) for bb in bounds])
    ineq_low = np.stack([np.kron(_unit(x, x), eye_t) for x in range(D_A)])
    ineq_flag = np.zeros((D_A, m_out, D_A, D_A), dtype=np.complex128)
    return ConstraintSet(
        np.stack(lows),
        np.stack(flags),
        np.array(targets),
        tuple(kinds),
        ineq_low,
        ineq_flag,
        px * b,
        marg,
        n_tilde,
    )


def relax_constraints(constraints: ConstraintSet, radius: float) -> ConstraintSet:
    if radius < 0:
        raise DomainError("relaxation radius must be non-negative")
    out = replace(constraints, radius=float(radius))
    if "face" in constraints.__dict__:
        out.__dict__["face"] = constraints.face  # the face does not depend on the radius
    return out


# ---------------------------------------------------------------------------
# G and Z maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GZMaps:
    """Measurement/sifting map restricted to its image, plus the key-map pinching.

    For basis j the Alice pair (j, j+2) carries key bits 0/1. ``w[j]`` maps the
    low block onto the support of F_j = sqrt(sum of kept low elements).
    """

    t: int
    n_flags: int
    w: tuple[np.ndarray, np.ndarray]
    f_low: tuple[np.ndarray, np.ndarray]
    kept: tuple[tuple[int, ...], tuple[int, ...]]
    family: str = "constraint"

    @property
    def out_dim(self) -> int:
        """Dimension of R (x) A (x) B_sq (x) B~."""
        return 2 * D_A * (self.t + self.n_flags) * 2

    @staticmethod
    def pair(j: int) -> tuple[int, int]:
        return j, j + 2

    def apply(self, state: ReducedState) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per basis: (low tau of size 2r, flag taus of shape (|K_j|, 2, 2)), R index outermost."""
        t = self.t
        out = []
        for j in (0, 1):
            a0, a1 = self.pair(j)
            w = self.w[j]
            r = w.shape[0]
            low = np.empty((2 * r, 2 * r), dtype=np.complex128)
            for i, ai in enumerate((a0, a1)):
                for k, ak in enumerate((a0, a1)):
                    blk = state.rho_low[ai * t : (ai + 1) * t, ak * t : (ak + 1) * t]
                    low[i * r : (i + 1) * r, k * r : (k + 1) * r] = w @ blk @ w.conj().T
            idx = np.array(self.kept[j])
            fl = state.flags[np.ix_(idx, [a0, a1], [a0, a1])]
            out.append((low, fl))
        return out

    def adjoint(self, blocks: list[tuple[np.ndarray, np.ndarray]]) -> ReducedState:
        t = self.t
        res = ReducedState.zeros(t, self.n_flags)
        for j, (low, fl) in enumerate(blocks):
            a0, a1 = self.pair(j)
            w = self.w[j]
            r = w.shape[0]
            for i, ai in enumerate((a0, a1)):
                for k, ak in enumerate((a0, a1)):
                    blk = low[i * r : (i + 1) * r, k * r : (k + 1) * r]
                    res.rho_low[ai * t : (ai + 1) * t, ak * t : (ak + 1) * t] += w.conj().T @ blk @ w
            idx = np.array(self.kept[j])
            res.flags[np.ix_(idx, [a0, a1], [a0, a1])] += fl
        return res

    def kraus(self) -> list[np.ndarray]:
        """Explicit K_j from A (x) B_sq to R (x) A (x) B_sq (x) B~ (for cross-checks)."""
        db = self.t + self.n_flags
        mats = []
        for j in (0, 1):
            fb = np.zeros((db, db), dtype=np.complex128)
            fb[: self.t, : self.t] = self.f_low[j]
            for k in self.kept[j]:
                fb[self.t + k, self.t + k] = 1.0
            a0, a1 = self.pair(j)
            ra = np.kron(np.array([[1.0], [0.0]]), _unit(a0, a0)) + np.kron(
                np.array([[0.0], [1.0]]), _unit(a1, a1)
            )
            btil = np.zeros((2, 1))
            btil[j, 0] = 1.0
            mats.append(np.kron(np.kron(ra, fb), btil))
        return mats


def build_gz_maps(squashed: SquashedPovm, family: str = "constraint") -> GZMaps:
    ws, fs = [], []
    for j in (0, 1):
        s = squashed.low[list(KEPT[j])].sum(axis=0)
        s = 0.5 * (s + s.conj().T)
        lam, u = np.linalg.eigh(s)
        lam = np.clip(lam, 0.0, None)
        fs.append((u * np.sqrt(lam)) @ u.conj().T)
        sup = lam > RANK_TOL * max(lam.max(initial=0.0), 1.0)
        ws.append((u[:, sup] * np.sqrt(lam[sup])).conj().T)
    return GZMaps(squashed.low_dim, squashed.n_outcomes, tuple(ws), tuple(fs), KEPT, family)


# ---------------------------------------------------------------------------
# objective and gradient
# ---------------------------------------------------------------------------


def _pinch(tau: np.ndarray) -> np.ndarray:
    """Zero the off-diagonal key-register blocks (R is the outer index of size 2)."""
    h = tau.shape[-1] // 2
    out = np.zeros_like(tau)
    out[..., :h, :h] = tau[..., :h, :h]
    out[..., h:, h:] = tau[..., h:, h:]
    return out


def _all_blocks(blocks):
    for low, fl in blocks:
        yield low
        yield from fl


def _perturb(blocks, eps: float, d_out: int):
    if eps == 0.0:
        return blocks
    out = []
    for low, fl in blocks:
        out.append(
            (
                (1 - eps) * low + eps / d_out * np.eye(low.shape[0]),
                (1 - eps) * fl + eps / d_out * np.eye(2),
            )
        )
    return out


def _xlogx(mat: np.ndarray) -> float:
    """sum lambda ln lambda over eigenvalues (0 ln 0 = 0)."""
    lam = np.linalg.eigvalsh(mat)
    if lam.size and lam.min() < -NEG_TOL:
        raise NumericalDegeneracyError(f"negative eigenvalue {lam.min():.3e}")
    lam = lam[lam > 0]
    return float(np.sum(lam * np.log(lam)))


def _block_divergence(blocks) -> float:
    total = 0.0
    for mat in _all_blocks(blocks):
        if mat.size:
            total += _xlogx(mat) - _xlogx(_pinch(mat))
    return total


def choose_epsilon(state: ReducedState, gz: GZMaps) -> float:
    """Smallest perturbation on the ladder giving every block eigenvalues >= EIG_FLOOR."""
    blocks = gz.apply(state)
    lows = [b[0] for b in blocks if b[0].size]
    flags = [b[1] for b in blocks if b[1].size]
    mins = [np.linalg.eigvalsh(m).min() for m in lows] + [np.linalg.eigvalsh(f).min() for f in flags]
    lam = float(min(mins))
    for eps in EPS_LADDER:
        if (1 - eps) * lam + eps / gz.out_dim >= EIG_FLOOR:
            return eps
    raise NumericalDegeneracyError(f"smallest block eigenvalue {lam:.3e} cannot be lifted by the perturbation ladder")


def objective(state: ReducedState, gz: GZMaps, epsilon: float = 0.0) -> float:
    """D(G_eps(rho) || Z(G_eps(rho))) in bits, evaluated blockwise on the image of G."""
    return _block_divergence(_perturb(gz.apply(state), epsilon, gz.out_dim)) / LN2


def _logm(mat: np.ndarray) -> np.ndarray:
    lam, u = np.linalg.eigh(mat)
    if lam.min() <= 0:
        raise NumericalDegeneracyError("logarithm of a singular block; increase the perturbation")
    return (u * np.log(lam)[..., None, :]) @ u.conj().swapaxes(-1, -2)


def gradient(state: ReducedState, gz: GZMaps, epsilon: float) -> ReducedState:
    """(1 - eps) G^dagger[log G_eps(rho) - log Z(G_eps(rho))] in bits."""
    blocks = _perturb(gz.apply(state), epsilon, gz.out_dim)
    dual = []
    for low, fl in blocks:
        gl = _logm(low) - _logm(_pinch(low)) if low.size else low
        gf = _logm(fl) - _logm(_pinch(fl)) if fl.size else fl
        dual.append((gl, gf))
    return gz.adjoint(dual).scale((1 - epsilon) / LN2).hermitian()


def perturbation_penalty(epsilon: float, d_out: int) -> float:
    """Bound (bits) on |f - f_eps| for the identity-mixing perturbation."""
    if epsilon <= 0:
        return 0.0
    return 2 * epsilon * (d_out - 1) * np.log2(d_out / (epsilon * (d_out - 1)))


# ---------------------------------------------------------------------------
# linear SDPs over the constraint set
# ---------------------------------------------------------------------------


@dataclass
class Face:
    """Face of the PSD cone on which every feasible state (nearly) lives.

    ``v`` is an isometry onto the allowed part of the low block and ``u[k]``
    onto the allowed Alice subspace of flag k. Each entry of ``certs`` is a
    pair (y, z), z >= 0, with sum y G + sum z H negative semidefinite on the
    previous face and vanishing on feasible states; adding multiples of it
    to a dual point lifts the slack on excluded directions. ``weight`` holds
    w_j = 1 / p_j on rows with small targets, ``kernel`` an orthonormal basis
    of the kernel of Alice's marginal and ``kernel_coef`` the combination of
    marginal rows equal to its projector.
    """

    v: np.ndarray
    u: tuple[np.ndarray, ...]
    certs: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    weight: np.ndarray | None = None
    kernel: np.ndarray | None = None
    kernel_coef: np.ndarray | None = None

    @property
    def groups(self) -> list[tuple[int, np.ndarray]]:
        dims = np.array([uk.shape[1] for uk in self.u])
        return [(int(d), np.flatnonzero(dims == d)) for d in sorted(set(dims.tolist())) if d > 0]

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.v.shape[1],) + tuple(uk.shape[1] for uk in self.u)

    def compress(self, low: np.ndarray, flags: np.ndarray) -> tuple[np.ndarray, ...]:
        """Map operators (leading batch axis) into face coordinates, one stack per block size."""
        v = self.v
        out = [(v.conj().T @ low @ v)[:, None]]
        for d, idx in self.groups:
            u = np.stack([self.u[k] for k in idx])
            out.append(u.conj().swapaxes(-1, -2)[None] @ flags[:, idx] @ u[None])
        return tuple(out)

    def expand(self, mats: tuple[np.ndarray, ...], n_flags: int) -> ReducedState:
        low = self.v @ mats[0][0] @ self.v.conj().T
        flags = np.zeros((n_flags, D_A, D_A), dtype=np.complex128)
        for (d, idx), blk in zip(self.groups, mats[1:]):
            u = np.stack([self.u[k] for k in idx])
            flags[idx] = u @ blk @ u.conj().swapaxes(-1, -2)
        return ReducedState(low, flags).hermitian()

    def restrict(self, mats: tuple[np.ndarray, ...], cut: float) -> "Face":
        """Drop eigendirections where the face-coordinate operator ``mats`` is at least ``cut``."""
        def keep(m):
            lam, vec = np.linalg.eigh(0.5 * (m + m.conj().T))
            return vec[:, lam < cut]

        v = self.v @ keep(mats[0][0])
        u = list(self.u)
        for (d, idx), blk in zip(self.groups, mats[1:]):
            for k, m in zip(idx, blk):
                u[k] = self.u[k] @ keep(m)
        return Face(v, tuple(u), list(self.certs), self.weight, self.kernel, self.kernel_coef)


def _null_space(mat: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    lam, vec = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    scale = max(float(np.abs(lam).max(initial=0.0)), 1.0)
    return vec[:, lam <= tol * scale]


def trivial_face(cs: ConstraintSet) -> Face:
    n0 = cs.eq_low.shape[1]
    return Face(np.eye(n0), tuple(np.eye(D_A) for _ in range(cs.n_flags)))


def _cut_projector(mat: np.ndarray, level: float) -> np.ndarray:
    lam, vec = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    big = vec[:, lam >= level]
    return big @ big.conj().T


def _precondition(basis: np.ndarray, thin: np.ndarray) -> np.ndarray:
    """basis @ (1 + basis^+ thin basis)^(-1/2): shrinks directions where feasible weight is tiny."""
    if basis.shape[1] == 0:
        return basis
    lam, vec = np.linalg.eigh(basis.conj().T @ thin @ basis)
    return basis @ (vec / np.sqrt(1.0 + np.maximum(lam, 0.0))) @ vec.conj().T


def find_face(cs: ConstraintSet) -> Face:
    """Coordinates in which the feasible set is well conditioned.

    A probability constraint Tr(G rho) = p with G >= 0 limits the weight on
    an eigendirection of G with eigenvalue lam to p / lam. Directions that
    must be empty (p below ZERO_TARGET, or the kernel of Alice's marginal)
    are removed; directions that may only carry a small weight (p below
    THIN_TARGET) are rescaled so that the interior point method sees them at
    unit scale. The weights w_j = 1 / p_j, extended to the removed
    directions, also feed the weighted eigenvalue certificate.
    """
    kinds = np.array(cs.eq_kind)
    zero_coef = np.zeros(cs.n_eq)
    weight = np.zeros(cs.n_eq)
    decade = np.full(cs.n_eq, np.nan)
    cut_low = np.zeros(cs.eq_low.shape[1:], dtype=np.complex128)
    cut_flag = np.zeros(cs.eq_flag.shape[1:], dtype=np.complex128)
    for j in np.flatnonzero(kinds == "prob"):
        p = max(float(cs.eq_target[j]), 0.0)
        if p <= ZERO_TARGET:
            level = max(p / FACE_WEIGHT_TOL, FACE_CUT_FLOOR)
            cut_low += _cut_projector(cs.eq_low[j], level)
            for k in np.flatnonzero(np.abs(cs.eq_flag[j]).max(axis=(1, 2)) > 0):
                cut_flag[k] += _cut_projector(cs.eq_flag[j, k], level)
            zero_coef[j] = 1.0
            weight[j] = 1.0 / max(p, WEIGHT_FLOOR)
        elif p <= THIN_TARGET:
            weight[j] = 1.0 / p
            decade[j] = np.floor(np.log10(p))
    marg = np.flatnonzero(kinds == "marginal")
    kern = _null_space(cs.alice_marginal, 1e-12)
    kern_coef = None
    if kern.shape[1] and marg.size:
        proj = kern @ kern.conj().T
        target = np.concatenate([np.kron(proj, np.eye(cs.t)).ravel(), np.broadcast_to(proj, (cs.n_flags, D_A, D_A)).ravel()])
        basis = np.concatenate([cs.eq_low[marg].reshape(marg.size, -1), cs.eq_flag[marg].reshape(marg.size, -1)], axis=1)
        a = np.concatenate([basis.real, basis.imag], axis=1).T
        rhs = np.concatenate([target.real, target.imag])
        kern_coef = np.zeros(cs.n_eq)
        kern_coef[marg] = np.linalg.lstsq(a, rhs, rcond=None)[0]
        zero_coef += kern_coef
        cut_low += np.kron(proj, np.eye(cs.t))
        cut_flag += proj
    thin = np.where(np.isnan(decade), 0.0, weight)
    thin_low = np.tensordot(thin, cs.eq_low, axes=1)
    thin_flag = np.tensordot(thin, cs.eq_flag, axes=1)
    v = _precondition(_null_space(cut_low), thin_low)
    u = tuple(_precondition(_null_space(cut_flag[k]), thin_flag[k]) for k in range(cs.n_flags))
    # one certificate per decade of p, so a few badly resolved rows do not tax all of them
    groups = [zero_coef] + [np.where(decade == d, 1.0, 0.0) for d in np.unique(decade[~np.isnan(decade)])]
    certs = [(-c, np.zeros(cs.n_ineq)) for c in groups if np.any(c)]
    return Face(v, u, certs, weight, kern if kern_coef is not None else None, kern_coef)


def row_reduction(cs: ConstraintSet, face: Face) -> np.ndarray:
    """Q with Q A having orthonormal rows spanning the equality operators on the face."""
    mats = face.compress(cs.eq_low, cs.eq_flag)
    flat = np.concatenate([m.reshape(cs.n_eq, -1) for m in mats], axis=1)
    real = np.concatenate([flat.real, flat.imag], axis=1)
    u, s, _ = np.linalg.svd(real, full_matrices=False)
    keep = s > RANK_TOL * s[0]
    return (u[:, keep] / s[keep]).T


@dataclass
class LinearResult:
    state: ReducedState
    y_eq: np.ndarray
    z_ineq: np.ndarray
    t: float
    solution: sdp.Solution


def _standard_form(
    cs: ConstraintSet, cost: ReducedState | None, phase1: bool, radius: float | None = None, face: Face | None = None
) -> tuple[sdp.Problem, dict]:
    """Assemble the conic program; returns it with bookkeeping to map solutions back.

    Without relaxation the problem is posed on the reduced face and the
    equality rows are replaced by an orthonormal basis of their span.
    """
    r = cs.radius if radius is None else radius
    relax = phase1 or r > 0
    face = cs.face if face is None else face
    eq_mats = face.compress(cs.eq_low, cs.eq_flag)
    ineq_mats = face.compress(cs.ineq_low, cs.ineq_flag)
    book: dict = {"face": face, "relaxed": relax}

    lin_cols = (1 if phase1 else 0) + cs.n_ineq
    eq_rows: list[tuple[int, float, dict]] = []  # (source row, target, lin coefficients)
    if relax:
        pairs = []
        for j in range(cs.n_eq):
            if not cs.relaxable[j]:
                book["trace_row"] = len(eq_rows)
                eq_rows.append((j, cs.eq_target[j], {}))
                continue
            ia, ib = lin_cols, lin_cols + 1
            lin_cols += 2
            upper, lower = {ia: 1.0}, {ib: -1.0}
            if phase1:
                upper[0], lower[0] = -1.0, 1.0
            pairs.append((j, len(eq_rows), len(eq_rows) + 1))
            eq_rows.append((j, cs.eq_target[j] + r, upper))
            eq_rows.append((j, cs.eq_target[j] - r, lower))
        book["pairs"] = pairs
        src = np.array([row[0] for row in eq_rows])
        rows = tuple(m[src] for m in eq_mats)
        b_eq = np.array([row[1] for row in eq_rows])
        lin_eq = [row[2] for row in eq_rows]
    else:
        q = row_reduction(cs, face)
        rows = tuple(np.tensordot(q, m, axes=1) for m in eq_mats)
        b_eq = q @ cs.eq_target
        lin_eq = [{} for _ in range(q.shape[0])]
        book["q"] = q
    n_eq_rows = b_eq.size
    book["n_eq_rows"] = n_eq_rows

    off = 1 if phase1 else 0
    a_mats = tuple(np.concatenate([e, i]) for e, i in zip(rows, ineq_mats))
    m = n_eq_rows + cs.n_ineq
    a_lin = np.zeros((m, lin_cols))
    for i, d in enumerate(lin_eq):
        for col, val in d.items():
            a_lin[i, col] = val
    for i in range(cs.n_ineq):
        a_lin[n_eq_rows + i, off + i] = -1.0
    b = np.concatenate([b_eq, cs.ineq_target])

    c_lin = np.zeros(lin_cols)
    if phase1:
        c_lin[0] = 1.0
    if cost is None or phase1:
        c_mats = tuple(np.zeros(a.shape[1:], dtype=np.complex128) for a in a_mats)
    else:
        c_mats = tuple(x[0] for x in face.compress(cost.rho_low[None], cost.flags[None]))
    return sdp.Problem(a_mats, a_lin, b, sdp.Cone(c_mats, c_lin)), book


def _recover(cs: ConstraintSet, book: dict, sol: sdp.Solution) -> tuple[ReducedState, np.ndarray, np.ndarray]:
    y = sol.y
    n_eq_rows = book["n_eq_rows"]
    if not book["relaxed"]:
        y_eq = book["q"].T @ y[:n_eq_rows]
    else:
        y_eq = np.zeros(cs.n_eq)
        for j, ia, ib in book["pairs"]:
            y_eq[j] = y[ia] + y[ib]
        if "trace_row" in book:
            y_eq[~cs.relaxable] = y[book["trace_row"]]
    z = np.maximum(y[n_eq_rows:], 0.0)
    state = book["face"].expand(sol.x.mats, cs.n_flags)
    return state, y_eq, z


def solve_linear(cs: ConstraintSet, cost: ReducedState | None, tol: float = 1e-9, max_iters: int = 100) -> LinearResult:
    """min Tr(cost rho) over the (possibly relaxed) constraint set."""
    prob, book = _standard_form(cs, cost, phase1=False)
    sol = sdp.solve(prob, tol=tol, max_iters=max_iters)
    state, y_eq, z = _recover(cs, book, sol)
    return LinearResult(state, y_eq, z, 0.0, sol)


def phase_one(cs: ConstraintSet, radius: float = 0.0, tol: float = 1e-9) -> LinearResult:
    """min t with every relaxable equality within radius + t (trace exact, inequalities kept)."""
    prob, book = _standard_form(cs, None, phase1=True, radius=radius)
    sol = sdp.solve(prob, tol=tol)
    state, y_eq, z = _recover(cs, book, sol)
    return LinearResult(state, y_eq, z, float(max(sol.x.lin[0], 0.0)), sol)


def is_feasible(cs: ConstraintSet, radius: float) -> bool:
    return phase_one(cs, radius).t <= FEAS_TOL


def minimal_radius(cs: ConstraintSet, start: float = 1e-10, max_doublings: int = 80) -> float:
    """Smallest start * 2^k whose relaxation is feasible (0 when already feasible)."""
    if is_feasible(cs, 0.0):
        return 0.0
    r = start
    for _ in range(max_doublings):
        if is_feasible(cs, r):
            return r
        r *= 2.0
    raise InfeasibleError(r, "no feasible relaxation found")


def certified_linear_bound(grad: ReducedState, cs: ConstraintSet, y_eq: np.ndarray, z: np.ndarray) -> float:
    """Lower bound on min Tr(grad rho) over the constraint set from any (y, z >= 0).

    Uses Tr(rho) = 1 and rho >= 0: Tr(grad rho) >= y.g + z.h - r|y| + min(0, lambda_min(grad - sum y G - sum z H)).
    """
    z = np.maximum(z, 0.0)
    lam = _slack(grad, cs, y_eq, z).min_eigenvalue()
    penalty = cs.radius * float(np.abs(y_eq[cs.relaxable]).sum())
    return float(y_eq @ cs.eq_target + z @ cs.ineq_target - penalty + min(0.0, lam))


def _slack(grad: ReducedState, cs: ConstraintSet, y_eq: np.ndarray, z: np.ndarray) -> ReducedState:
    return ReducedState(
        grad.rho_low - np.tensordot(y_eq, cs.eq_low, axes=1) - np.tensordot(z, cs.ineq_low, axes=1),
        grad.flags - np.tensordot(y_eq, cs.eq_flag, axes=1) - np.tensordot(z, cs.ineq_flag, axes=1),
    ).hermitian()


def _inv_sqrt(mat: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(mat)
    return (vec / np.sqrt(lam)[..., None, :]) @ vec.conj().swapaxes(-1, -2)


def weighted_linear_bound(grad: ReducedState, cs: ConstraintSet, y_eq: np.ndarray, z: np.ndarray) -> float:
    """Certified bound with the eigenvalue term taken relative to W = 1 + sum_j w_j G_j.

    For W > 0, slack >= lambda W with lambda = lambda_min(W^-1/2 slack W^-1/2),
    and on the constraint set Tr(W rho) <= 1 + w.g + r|w|. Rows with tiny
    targets get large weights, so solver noise along the directions they
    squeeze costs little. Without relaxation every feasible state vanishes
    on the kernel of Alice's marginal, which is then projected out exactly.
    """
    face = cs.face
    z = np.maximum(z, 0.0)
    slack = _slack(grad, cs, y_eq, z)
    relax = cs.relaxable
    weight = face.weight.copy()
    total = 1.0 + float(weight @ cs.eq_target) + cs.radius * float(np.abs(weight[relax]).sum())
    keep_a = np.eye(D_A)
    if face.kernel is not None:
        if cs.radius == 0.0:
            keep_a = _null_space(face.kernel @ face.kernel.conj().T)
        else:
            coef = MARGINAL_WEIGHT * face.kernel_coef
            weight += coef
            total += max(float(coef @ cs.eq_target), 0.0) + cs.radius * float(np.abs(coef).sum())
    keep_low = np.kron(keep_a, np.eye(cs.t))
    w_low = np.eye(slack.rho_low.shape[0]) + np.tensordot(weight, cs.eq_low, axes=1)
    w_flag = np.eye(D_A) + np.tensordot(weight, cs.eq_flag, axes=1)
    lam = np.inf
    for w, sl, keep in [(w_low[None], slack.rho_low[None], keep_low), (w_flag, slack.flags, keep_a)]:
        kd = keep.conj().T
        w, sl = kd @ w @ keep, kd @ sl @ keep
        a = _inv_sqrt(0.5 * (w + w.conj().swapaxes(-1, -2)))
        lam = min(lam, float(np.linalg.eigvalsh(a @ sl @ a).min()))
    penalty = cs.radius * float(np.abs(y_eq[relax]).sum())
    return float(y_eq @ cs.eq_target + z @ cs.ineq_target - penalty + min(0.0, lam) * total)


def face_certified_bound(grad: ReducedState, cs: ConstraintSet, y_eq: np.ndarray, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Best certified bound over (y, z) + sum_k c_k certs_k with c_k >= 0; returns (bound, c).

    Later certificates only act on the face left by earlier ones, so the
    multipliers are searched one at a time from the last round back.
    """
    certs = cs.face.certs
    c = np.zeros(len(certs))

    def value(cv):
        y, zz = y_eq.copy(), z.copy()
        for ck, (ye, zi) in zip(cv, certs):
            y += ck * ye
            zz += ck * zi
        val = certified_linear_bound(grad, cs, y, zz)
        if cs.face.weight is not None:
            val = max(val, weighted_linear_bound(grad, cs, y, zz))
        return val

    best = value(c)
    for _ in range(2):
        for k in reversed(range(len(certs))):
            def neg(e: float) -> float:
                trial = c.copy()
                trial[k] = 10.0**e
                return -value(trial)

            res = minimize_scalar(neg, bounds=(-4.0, 14.0), method="bounded", options={"xatol": 1e-3})
            if -res.fun > best:
                best = -res.fun
                c[k] = 10.0**res.x
    return float(best), c


# ---------------------------------------------------------------------------
# Frank-Wolfe and the certified bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FWConfig:
    gap_tol: float = 1e-6
    max_iters: int = 300
    line_search_tol: float = 1e-8
    sdp_tol: float = 1e-9
    sdp_max_iters: int = 100
    allow_relaxation: bool = True


@dataclass
class SolveLog:
    """Structured per-solve record; serialises to one JSON object."""

    n_tilde: int
    events: list[dict] = field(default_factory=list)

    def add(self, kind: str, **data) -> None:
        rec = {"event": kind}
        rec.update({k: (float(v) if isinstance(v, (np.floating, np.integer)) else v) for k, v in data.items()})
        self.events.append(rec)

    def to_json(self) -> str:
        return json.dumps({"n_tilde": self.n_tilde, "events": self.events}, sort_keys=True)


@dataclass
class FWResult:
    state: ReducedState
    value: float
    gap: float
    iterations: int
    history: list[float]
    converged: bool


def _line_search(f, tol: float) -> tuple[float, float]:
    res = minimize_scalar(f, bounds=(0.0, 1.0), method="bounded", options={"xatol": tol})
    cands = [(float(res.fun), float(res.x)), (f(1.0), 1.0)]
    val, gamma = min(cands)
    return gamma, val


def frank_wolfe(
    cs: ConstraintSet,
    gz: GZMaps,
    config: FWConfig = FWConfig(),
    start: ReducedState | None = None,
    log: SolveLog | None = None,
) -> FWResult:
    if start is None:
        start = solve_linear(cs, None, config.sdp_tol, config.sdp_max_iters).state
    state = start
    value = objective(state, gz)
    history = [value]
    gap = np.inf
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        eps = choose_epsilon(state, gz)
        grad = gradient(state, gz, eps)
        delta = solve_linear(cs, grad, config.sdp_tol, config.sdp_max_iters).state
        gap = grad.inner(state - delta)
        if log is not None:
            log.add("fw_iter", iteration=it, objective=value, gap=gap, epsilon=eps)
        if gap < config.gap_tol:
            converged = True
            break
        direction = delta - state

        def f(g: float) -> float:
            return objective(state + direction.scale(g), gz)

        gamma, new_value = _line_search(f, config.line_search_tol)
        if new_value >= value:
            # no descent along this direction at the resolution of the line search
            converged = gap < config.gap_tol
            break
        state = state + direction.scale(gamma)
        value = new_value
        history.append(value)
    return FWResult(state, value, float(gap), it, history, converged)


@dataclass(frozen=True)
class BoundPair:
    upper: float
    lower: float
    lower_raw: float
    fw_gap: float
    violation: float
    radius: float
    epsilon: float
    iterations: int
    status: str
    family: str = "constraint"

    def __post_init__(self):
        for name in ("upper", "lower", "lower_raw", "fw_gap", "violation", "radius", "epsilon"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "iterations", int(self.iterations))

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    def as_dict(self) -> dict:
        d = asdict(self)
        d["gap"] = self.gap
        return d


def dual_lower_bound(
    state: ReducedState,
    cs: ConstraintSet,
    gz: GZMaps,
    config: FWConfig = FWConfig(),
    fw: FWResult | None = None,
) -> BoundPair:
    upper = objective(state, gz)
    eps = choose_epsilon(state, gz)
    f_eps = objective(state, gz, eps)
    grad = gradient(state, gz, eps)
    lin = solve_linear(cs, grad, config.sdp_tol, config.sdp_max_iters)
    status = lin.solution.status
    raw = 0.0
    # any dual point certifies, so a poor solver status only costs tightness
    if np.all(np.isfinite(lin.y_eq)) and np.all(np.isfinite(lin.z_ineq)):
        bound, _ = face_certified_bound(grad, cs, lin.y_eq, lin.z_ineq)
        if np.isfinite(bound):
            raw = f_eps - grad.inner(state) + bound - perturbation_penalty(eps, gz.out_dim)
    return BoundPair(
        upper=upper,
        lower=max(raw, 0.0),
        lower_raw=raw,
        fw_gap=fw.gap if fw is not None else float("nan"),
        violation=cs.violation(state),
        radius=cs.radius,
        epsilon=eps,
        iterations=fw.iterations if fw is not None else 0,
        status=status,
        family=gz.family,
    )


def solve_pa(cs: ConstraintSet, gz: GZMaps, config: FWConfig = FWConfig(), log: SolveLog | None = None) -> BoundPair:
    """Feasibility check, optional relaxation, Frank-Wolfe, certified bound."""
    log = log if log is not None else SolveLog(cs.n_tilde)
    t0 = time.perf_counter()
    p1 = phase_one(cs)
    log.add("phase_one", min_violation=p1.t, status=p1.solution.status)
    if p1.t > FEAS_TOL:
        if not config.allow_relaxation:
            raise InfeasibleError(p1.t)
        r = minimal_radius(cs)
        cs = relax_constraints(cs, r)
        log.add("relaxation", radius=r)
    fw = frank_wolfe(cs, gz, config, log=log)
    pair = dual_lower_bound(fw.state, cs, gz, config, fw)
    log.add("bound", seconds=time.perf_counter() - t0, **pair.as_dict())
    return pair
