"""Truncated two-mode Fock space.

States with at most ``cutoff`` photons in total are indexed sector by sector:
all of the 0-photon sector, then the 1-photon sector, and so on, with
ascending photon number in the second mode inside each sector. A sector is
therefore a contiguous slice, which keeps block projections cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np

from . import _kernels

HERMITIAN_TOL = 1e-10


class CutoffError(ValueError):
    """Requested photon number exceeds the basis cutoff."""


class DomainError(ValueError):
    """Parameter outside its admissible range."""


def sector_start(n: int) -> int:
    return n * (n + 1) // 2


def fock_dimension(cutoff: int) -> int:
    return (cutoff + 1) * (cutoff + 2) // 2


@dataclass(frozen=True)
class FockBasis:
    cutoff: int

    def __post_init__(self):
        if self.cutoff < 0:
            raise DomainError(f"cutoff must be non-negative, got {self.cutoff}")

    @property
    def dim(self) -> int:
        return fock_dimension(self.cutoff)

    def index(self, n1: int, n2: int) -> int:
        if n1 < 0 or n2 < 0:
            raise DomainError("photon numbers must be non-negative")
        if n1 + n2 > self.cutoff:
            raise CutoffError(f"|{n1},{n2}> exceeds cutoff {self.cutoff}")
        return sector_start(n1 + n2) + n2

    def occupation(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.dim:
            raise IndexError(index)
        n = int((np.sqrt(8 * index + 1) - 1) // 2)
        # guard against float rounding at sector boundaries
        while sector_start(n + 1) <= index:
            n += 1
        while sector_start(n) > index:
            n -= 1
        n2 = index - sector_start(n)
        return n - n2, n2

    def sector_slice(self, n: int) -> slice:
        if not 0 <= n <= self.cutoff:
            raise CutoffError(f"sector {n} outside cutoff {self.cutoff}")
        return slice(sector_start(n), sector_start(n + 1))

    @cached_property
    def occupations(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays (n1, n2) over the flat index."""
        n1 = np.empty(self.dim, dtype=np.int64)
        n2 = np.empty(self.dim, dtype=np.int64)
        for n in range(self.cutoff + 1):
            s = self.sector_slice(n)
            n2[s] = np.arange(n + 1)
            n1[s] = n - n2[s]
        return n1, n2

    @cached_property
    def total_number(self) -> np.ndarray:
        n1, n2 = self.occupations
        return n1 + n2

    def ket(self, n1: int, n2: int) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.complex128)
        v[self.index(n1, n2)] = 1.0
        return v

    def annihilation(self, mode: int) -> np.ndarray:
        """Matrix of a_1 (mode=0) or a_2 (mode=1) on the truncated space."""
        a = np.zeros((self.dim, self.dim))
        n1, n2 = self.occupations
        for j in range(self.dim):
            if mode == 0 and n1[j] > 0:
                a[self.index(n1[j] - 1, n2[j]), j] = np.sqrt(n1[j])
            elif mode == 1 and n2[j] > 0:
                a[self.index(n1[j], n2[j] - 1), j] = np.sqrt(n2[j])
        return a


@dataclass(frozen=True)
class Operator:
    """Dense operator on a truncated two-mode Fock space."""

    basis: FockBasis
    matrix: np.ndarray = field(repr=False)
    block_diagonal: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(f"matrix shape {m.shape} does not match basis dim {self.basis.dim}")
        if self.block_diagonal:
            tot = self.basis.total_number
            m = np.where(tot[:, None] == tot[None, :], m, 0.0)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, basis: FockBasis) -> "Operator":
        return cls(basis, np.eye(basis.dim), block_diagonal=True)

    @classmethod
    def projector(cls, basis: FockBasis, vec: np.ndarray) -> "Operator":
        vec = np.asarray(vec)
        tot = basis.total_number[np.abs(vec) > 0]
        return cls(basis, np.outer(vec, vec.conj()), block_diagonal=bool(np.all(tot == tot[0])) if tot.size else True)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= tol)

    def sector(self, n: int) -> np.ndarray:
        s = self.basis.sector_slice(n)
        return self.matrix[s, s]

    def cross_sector_norm(self) -> float:
        tot = self.basis.total_number
        off = tot[:, None] != tot[None, :]
        return float(np.max(np.abs(self.matrix[off]), initial=0.0))


def mode_monomial_state(c1: complex, c2: complex, n: int, basis: FockBasis) -> np.ndarray:
    """(c1 a1^dag + c2 a2^dag)^n |0> / sqrt(n!) on the flat basis."""
    if n > basis.cutoff:
        raise CutoffError(f"n={n} exceeds cutoff {basis.cutoff}")
    if n < 0:
        raise DomainError("n must be non-negative")
    if c1 == 0 and c2 == 0:
        raise DomainError("(c1, c2) must not both vanish")
    vec = np.zeros(basis.dim, dtype=np.complex128)
    vec[basis.sector_slice(n)] = sector_monomial(c1, c2, n)
    return vec


def sector_monomial(c1: complex, c2: complex, n: int) -> np.ndarray:
    """Coefficients of the monomial state restricted to its n-photon sector."""
    k = np.arange(n + 1)
    binom = np.array([comb(n, int(j)) for j in k], dtype=float)
    return np.sqrt(binom) * np.power(complex(c1), n - k) * np.power(complex(c2), k)


def project_block(op: Operator, n: int) -> Operator:
    s = op.basis.sector_slice(n)
    m = np.zeros_like(op.matrix)
    m[s, s] = op.matrix[s, s]
    return Operator(op.basis, m, block_diagonal=True)


def loss_coefficients(cutoff: int, t: float) -> np.ndarray:
    """Table c[m, l] = sqrt(C(m, l) t^(m-l) (1-t)^l), the single-mode loss Kraus amplitudes."""
    c = np.zeros((cutoff + 1, cutoff + 1))
    for m in range(cutoff + 1):
        for l in range(m + 1):
            c[m, l] = np.sqrt(comb(m, l) * t ** (m - l) * (1.0 - t) ** l)
    return c


def _check_transmissivity(t: float) -> None:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"transmissivity must lie in [0, 1], got {t}")


def loss_adjoint(op: Operator, t: float) -> Operator:
    """Heisenberg-picture action of equal two-mode pure loss with transmissivity t."""
    _check_transmissivity(t)
    n1, n2 = op.basis.occupations
    coef = loss_coefficients(op.basis.cutoff, t)
    out = _kernels.loss_adjoint_dense(np.ascontiguousarray(op.matrix), n1, n2, coef)
    return Operator(op.basis, out, block_diagonal=op.block_diagonal)


def loss_channel(rho: Operator, t: float) -> Operator:
    """Schrodinger-picture equal two-mode pure loss (Kraus sum)."""
    _check_transmissivity(t)
    n1, n2 = rho.basis.occupations
    coef = loss_coefficients(rho.basis.cutoff, t)
    out = _kernels.loss_forward_dense(np.ascontiguousarray(rho.matrix), n1, n2, coef)
    return Operator(rho.basis, out, block_diagonal=rho.block_diagonal)


def sector_loss_kraus(n: int, l1: int, l2: int, t: float) -> np.ndarray:
    """Kraus block mapping the n-photon sector to the (n - l1 - l2)-photon sector.

    Rows index the output sector, columns the input sector; both ordered by
    ascending second-mode occupation.
    """
    s = l1 + l2
    out = np.zeros((n - s + 1, n + 1))
    for k in range(n + 1):
        a1, a2 = n - k, k
        if a1 < l1 or a2 < l2:
            continue
        amp = np.sqrt(comb(a1, l1) * t ** (a1 - l1) * (1 - t) ** l1)
        amp *= np.sqrt(comb(a2, l2) * t ** (a2 - l2) * (1 - t) ** l2)
        out[k - l2, k] = amp
    return out


def sector_loss_adjoint(blocks: list[np.ndarray], t: float) -> list[np.ndarray]:
    """Loss adjoint applied to a block-diagonal operator given as per-sector blocks."""
    _check_transmissivity(t)
    out = []
    for n in range(len(blocks)):
        acc = np.zeros((n + 1, n + 1), dtype=np.complex128)
        for l1 in range(n + 1):
            for l2 in range(n + 1 - l1):
                k = sector_loss_kraus(n, l1, l2, t)
                acc += k.T @ blocks[n - l1 - l2] @ k
        out.append(acc)
    return out


def sector_loss_pure(vec: np.ndarray, t: float) -> list[np.ndarray]:
    """Loss applied to a pure state living in one sector.

    Returns the output density matrix as per-sector blocks for sectors 0..n.
    """
    _check_transmissivity(t)
    n = vec.size - 1
    out = [np.zeros((m + 1, m + 1), dtype=np.complex128) for m in range(n + 1)]
    for l1 in range(n + 1):
        for l2 in range(n + 1 - l1):
            w = sector_loss_kraus(n, l1, l2, t) @ vec
            out[n - l1 - l2] += np.outer(w, w.conj())
    return out

