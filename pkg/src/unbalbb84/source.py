"""Alice's unbalanced phase-encoded signals."""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, lgamma, log

import numpy as np

from .fock import DomainError, FockBasis, mode_monomial_state, sector_monomial

N_SIGNALS = 4


@dataclass(frozen=True)
class SignalSettings:
    """Source configuration.

    ``kappa`` is the phase-modulator transmissivity; the two time-bin pulses
    have amplitudes alpha and sqrt(kappa) alpha.
    """

    kappa: float = 1.0
    alpha: complex = 0.0
    signal_probs: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    basis_probs: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if not 0.0 < self.kappa <= 1.0:
            raise DomainError(f"kappa must lie in (0, 1], got {self.kappa}")
        if len(self.signal_probs) != N_SIGNALS:
            raise DomainError("need four signal probabilities")
        if abs(sum(self.signal_probs) - 1.0) > 1e-12 or min(self.signal_probs) < 0:
            raise DomainError("signal probabilities must form a distribution")
        if len(self.basis_probs) != 2:
            raise DomainError("need two basis probabilities")
        if abs(sum(self.basis_probs) - 1.0) > 1e-12 or min(self.basis_probs) < 0:
            raise DomainError("basis probabilities must form a distribution")

    @property
    def xi(self) -> float:
        return 1.0 / (1.0 + self.kappa)

    @property
    def mean_photon_number(self) -> float:
        """|alpha|^2 of the first pulse."""
        return abs(self.alpha) ** 2

    @property
    def rescaled_intensity(self) -> float:
        """|alpha~|^2 = |alpha|^2 / xi, the Poisson mean of the total photon number."""
        return abs(self.alpha) ** 2 / self.xi

    def with_intensity(self, mu: float) -> "SignalSettings":
        return SignalSettings(self.kappa, np.sqrt(mu), self.signal_probs, self.basis_probs)

    @staticmethod
    def phase(x: int) -> float:
        return 0.5 * np.pi * x


def signal_ket(x: int, n: int, settings: SignalSettings, basis: FockBasis) -> np.ndarray:
    xi = settings.xi
    return mode_monomial_state(
        np.sqrt(xi), np.sqrt(1.0 - xi) * np.exp(-1j * settings.phase(x)), n, basis
    )


def signal_sector(x: int, n: int, xi: float) -> np.ndarray:
    """|s^x_n> restricted to its own n-photon sector."""
    return sector_monomial(np.sqrt(xi), np.sqrt(1.0 - xi) * np.exp(-0.5j * np.pi * x), n)


def signal_overlap(x: int, y: int, n: int, settings: SignalSettings) -> complex:
    """<s^y_n | s^x_n> in closed form."""
    xi = settings.xi
    dphi = settings.phase(y) - settings.phase(x)
    return complex((xi + (1.0 - xi) * np.exp(1j * dphi)) ** n)


def poisson_weight(n_tilde: int, settings: SignalSettings) -> float:
    mu = settings.rescaled_intensity
    if mu == 0.0:
        return 1.0 if n_tilde == 0 else 0.0
    return exp(-mu + n_tilde * log(mu) - lgamma(n_tilde + 1))


def poisson_truncation(mu: float, tail: float = 1e-12) -> int:
    """Smallest n_max with Poisson(mu) mass above n_max below ``tail``."""
    if mu == 0.0:
        return 0
    cdf = 0.0
    n = 0
    while True:
        cdf += exp(-mu + n * log(mu) - lgamma(n + 1))
        if 1.0 - cdf < tail:
            return n
        n += 1


def alice_reduced_matrix(n_tilde: int, settings: SignalSettings) -> np.ndarray:
    p = np.asarray(settings.signal_probs)
    m = np.empty((N_SIGNALS, N_SIGNALS), dtype=np.complex128)
    for x in range(N_SIGNALS):
        for y in range(N_SIGNALS):
            m[x, y] = np.sqrt(p[x] * p[y]) * signal_overlap(x, y, n_tilde, settings)
    return m
