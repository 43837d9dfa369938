"""Flag-state squashing and the cross-click bound on the low-photon weight."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import DomainError, fock_dimension
from .povm import CROSS_CLICK, PovmSet, cross_click_diagonal

MODES = ("trusted-analytic", "dark-count-free", "numeric")


@dataclass(frozen=True)
class SquashedPovm:
    """POVM after flag-state squashing at photon cutoff ``n_b``.

    ``low`` has shape (28, T, T) with T = (n_b+1)(n_b+2)/2; the flag part is
    the canonical basis of a 28-dimensional space and is kept implicit.
    """

    n_b: int
    low: np.ndarray
    source: PovmSet

    @property
    def n_outcomes(self) -> int:
        return self.low.shape[0]

    @property
    def low_dim(self) -> int:
        return self.low.shape[1]

    @property
    def dim(self) -> int:
        return self.low_dim + self.n_outcomes

    def element(self, k: int) -> np.ndarray:
        """Full squashed element: low block (+) |k><k| on the flag space."""
        out = np.zeros((self.dim, self.dim), dtype=np.complex128)
        t = self.low_dim
        out[:t, :t] = self.low[k]
        out[t + k, t + k] = 1.0
        return out


def squash_povm(povm: PovmSet, n_b: int) -> SquashedPovm:
    if n_b < 0:
        raise DomainError("flag cutoff must be non-negative")
    if povm.cutoff < n_b:
        raise DomainError(f"POVM cutoff {povm.cutoff} is below the flag cutoff {n_b}")
    low = np.stack([povm.low_block(k, n_b) for k in range(len(povm))])
    return SquashedPovm(n_b, low, povm)


def p_cc_vacuum(p_d: float) -> float:
    if not 0.0 <= p_d < 1.0:
        raise DomainError(f"p_d must lie in [0, 1), got {p_d}")
    q = 1.0 - p_d
    return 1.0 - q**2 * (1.0 + p_d * q**2 * (2.0 - p_d))


def p_min_cc(n: int, xi: float, p_d: float) -> float:
    if n < 1:
        raise DomainError("use p_cc_vacuum for the vacuum sector")
    if not 0.5 <= xi < 1.0:
        raise DomainError(f"xi must lie in [1/2, 1), got {xi}")
    if not 0.0 <= p_d < 1.0:
        raise DomainError(f"p_d must lie in [0, 1), got {p_d}")
    q = 1.0 - p_d
    return 1.0 - q**2 * xi**n - q**4 * (1.0 - xi) ** n


def dark_count_free_denominator(n_b: int, xi: float) -> float:
    return 1.0 - xi ** (n_b + 1) - (1.0 - xi) ** (n_b + 1)


@dataclass(frozen=True)
class NumericCrossClick:
    """Cross-click floor values read off a Fock-diagonal cross-click operator."""

    low_floor: float  # min over sectors 0..n_b
    high_floor: float  # min over sectors n_b+1..cutoff
    sector_minima: tuple[float, ...]
    monotone: bool


def numeric_cross_click(povm: PovmSet, n_b: int) -> NumericCrossClick:
    if povm.cutoff <= n_b:
        raise DomainError("numeric cross-click floor needs sectors above the flag cutoff")
    diag = cross_click_diagonal(povm)
    minima = tuple(float(d.min()) for d in diag)
    # sector 0 may sit above sector 1 at large p_d; monotonicity only matters from 1 on
    tail = minima[1:]
    monotone = all(b > a for a, b in zip(tail, tail[1:]))
    return NumericCrossClick(min(minima[: n_b + 1]), min(minima[n_b + 1 :]), minima, monotone)


@dataclass(frozen=True)
class SubspaceBound:
    bound: float
    p_cc: float
    p_d: float
    xi: float
    n_b: int
    mode: str
    raw: float

    def __float__(self) -> float:
        return float(self.bound)


def weight_lower_bound(
    p_cc_x: float,
    n_b: int,
    xi: float,
    p_d: float,
    mode: str = "trusted-analytic",
    numeric: NumericCrossClick | None = None,
) -> SubspaceBound:
    """Lower bound on the weight of the (n <= n_b)-photon subspace given p(cc|x)."""
    if mode == "trusted-analytic":
        low, high = p_cc_vacuum(p_d), p_min_cc(n_b + 1, xi, p_d)
    elif mode == "dark-count-free":
        low, high = 0.0, dark_count_free_denominator(n_b, xi)
    elif mode == "numeric":
        if numeric is None:
            raise ValueError("numeric mode needs the cross-click floors")
        if not numeric.monotone:
            raise DomainError("cross-click floor is not monotone in photon number")
        low, high = numeric.low_floor, numeric.high_floor
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if high <= low:
        raise DomainError("cross-click floors are not separated")
    raw = 1.0 - (p_cc_x - low) / (high - low)
    return SubspaceBound(min(1.0, max(0.0, raw)), p_cc_x, p_d, xi, n_b, mode, raw)


def cross_click_probability(probs_x: np.ndarray) -> float:
    """Sum of the cross-click outcome probabilities in a length-28 vector."""
    return float(np.sum(np.asarray(probs_x)[list(CROSS_CLICK)]))


def low_space_dim(n_b: int) -> int:
    return fock_dimension(n_b)
