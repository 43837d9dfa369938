"""Simulated observations for a pure-loss channel.

Conditional statistics p(x, k | n~) stand in for an infinite-decoy estimate.
Totals at a given intensity come from a closed form (coherent light through
passive optics gives independent Poisson bins) and are cross-checked against
the Poisson mixture of the conditionals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import exp

import numpy as np

from .fock import CutoffError, DomainError, FockBasis, sector_loss_kraus
from .povm import (
    CROSS_CLICK,
    LABELS,
    N_OUTCOMES,
    PovmSet,
    bin_modes,
    label_for,
    postprocess_matrix,
)
from .source import N_SIGNALS, SignalSettings, poisson_truncation, poisson_weight, signal_sector


class NoSignalError(ValueError):
    """No round survives post-selection."""


@dataclass(frozen=True)
class ChannelModel:
    eta: float
    eta_det: float = 1.0
    p_d: float = 0.0
    trust_efficiency: bool = False
    trust_dark_counts: bool = True

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise DomainError(f"eta must lie in (0, 1], got {self.eta}")
        if not 0.0 < self.eta_det <= 1.0:
            raise DomainError(f"eta_det must lie in (0, 1], got {self.eta_det}")
        if not 0.0 <= self.p_d < 1.0:
            raise DomainError(f"p_d must lie in [0, 1), got {self.p_d}")
        if self.trust_efficiency and self.eta > self.eta_det:
            raise DomainError("total transmissivity exceeds the trusted detector efficiency")

    @property
    def transmissivity(self) -> float:
        """Loss attributed to the channel (and hence to Eve)."""
        return self.eta / self.eta_det if self.trust_efficiency else self.eta

    @property
    def trusted_eta_det(self) -> float:
        return self.eta_det if self.trust_efficiency else 1.0


def signal_basis(x: int) -> int:
    return x % 2


def key_bit(x: int) -> int:
    return 0 if x in (0, 1) else 1


def kept_outcomes(basis: int) -> tuple[int, ...]:
    return tuple(
        i for i, lab in enumerate(LABELS) if lab.basis == basis and lab.has_middle
    )


KEPT = (kept_outcomes(0), kept_outcomes(1))


def _lossy_signal(x: int, n: int, xi: float, t: float) -> list[np.ndarray]:
    """Kraus images K_l |s^x_n>, one vector per loss pattern, with output sector."""
    vec = signal_sector(x, n, xi)
    out = []
    for l1 in range(n + 1):
        for l2 in range(n + 1 - l1):
            out.append((n - l1 - l2, sector_loss_kraus(n, l1, l2, t) @ vec))
    return out


def conditional_state(n_tilde: int, channel: ChannelModel, settings: SignalSettings, basis: FockBasis | None = None) -> np.ndarray:
    """rho^{n~}_AB on C^4 (x) Fock(<= cutoff), Alice index outermost."""
    basis = basis or FockBasis(n_tilde)
    if n_tilde > basis.cutoff:
        raise CutoffError(f"n~={n_tilde} exceeds cutoff {basis.cutoff}")
    d = basis.dim
    p = np.asarray(settings.signal_probs)
    t = channel.transmissivity
    per_x = [_lossy_signal(x, n_tilde, settings.xi, t) for x in range(N_SIGNALS)]
    rho = np.zeros((N_SIGNALS * d, N_SIGNALS * d), dtype=np.complex128)
    for j in range(len(per_x[0])):
        v = np.zeros(N_SIGNALS * d, dtype=np.complex128)
        for x in range(N_SIGNALS):
            m, w = per_x[x][j]
            s = basis.sector_slice(m)
            v[x * d + s.start : x * d + s.stop] = np.sqrt(p[x]) * w
        rho += np.outer(v, v.conj())
    return rho


def conditional_probs(n_tilde: int, povm: PovmSet, channel: ChannelModel, settings: SignalSettings) -> np.ndarray:
    """Table p(x, k | n~) of shape (4, 28)."""
    if n_tilde > povm.cutoff:
        raise CutoffError(f"n~={n_tilde} exceeds POVM cutoff {povm.cutoff}")
    t = channel.transmissivity
    p = np.asarray(settings.signal_probs)
    out = np.zeros((N_SIGNALS, N_OUTCOMES))
    for x in range(N_SIGNALS):
        for m, w in _lossy_signal(x, n_tilde, settings.xi, t):
            # Tr(P_k |w><w|) = <w|P_k|w> for all k at once
            out[x] += np.real(np.einsum("a,kab,b->k", w.conj(), povm.blocks[m], w))
        out[x] *= p[x]
    return out


def total_statistics(settings: SignalSettings, channel: ChannelModel) -> np.ndarray:
    """Closed-form p(x, k) of shape (4, 28) at the intensity in ``settings``."""
    alpha = complex(settings.alpha)
    kappa = settings.kappa
    p = np.asarray(settings.signal_probs)
    pb = settings.basis_probs
    post = postprocess_matrix(channel.p_d, pb)
    out = np.zeros((N_SIGNALS, N_OUTCOMES))
    for x in range(N_SIGNALS):
        beta = np.array([alpha, np.sqrt(kappa) * alpha * np.exp(-1j * settings.phase(x))])
        ideal = np.zeros(N_OUTCOMES)
        for b in (0, 1):
            mu = channel.eta * np.abs(bin_modes(settings.xi, b) @ beta) ** 2
            click = -np.expm1(-mu)
            for mask in range(16):
                bits = np.array([(mask >> i) & 1 for i in range(4)], dtype=bool)
                prob = np.prod(np.where(bits, click, 1.0 - click))
                ideal[label_for(b, mask)] += pb[b] * prob
        out[x] = p[x] * (post @ ideal)
    return out


def fock_sum_statistics(settings: SignalSettings, channel: ChannelModel, povm: PovmSet, tail: float = 1e-12) -> tuple[np.ndarray, float]:
    """Poisson mixture of conditionals; returns the table and the neglected tail mass."""
    mu = settings.rescaled_intensity
    n_max = poisson_truncation(mu, tail)
    if n_max > povm.cutoff:
        raise CutoffError(f"need POVM cutoff {n_max} for tail {tail}")
    out = np.zeros((N_SIGNALS, N_OUTCOMES))
    mass = 0.0
    for n in range(n_max + 1):
        w = poisson_weight(n, settings)
        mass += w
        out += w * conditional_probs(n, povm, channel, settings)
    return out, max(0.0, 1.0 - mass)


def pass_probability(table: np.ndarray) -> float:
    """Probability of basis match and at least one middle click."""
    return float(sum(table[x, list(KEPT[signal_basis(x)])].sum() for x in range(N_SIGNALS)))


def cross_click_given_x(cond: np.ndarray, settings: SignalSettings) -> np.ndarray:
    p = np.asarray(settings.signal_probs)
    return cond[:, list(CROSS_CLICK)].sum(axis=1) / p


def key_table(table: np.ndarray) -> np.ndarray:
    """Joint weights over (key bit, outcome) for post-selected rounds, shape (2, 28)."""
    out = np.zeros((2, N_OUTCOMES))
    for x in range(N_SIGNALS):
        kept = list(KEPT[signal_basis(x)])
        out[key_bit(x), kept] += table[x, kept]
    return out


def _entropy_bits(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def ec_entropy(table: np.ndarray) -> float:
    """H(R|B) in bits over post-selected rounds, B being the full outcome label."""
    joint = key_table(table)
    total = joint.sum()
    if total <= 0:
        raise NoSignalError("p_pass is zero")
    joint = joint / total
    return _entropy_bits(joint.ravel()) - _entropy_bits(joint.sum(axis=0))


def ec_cost(table: np.ndarray, f_ec: float) -> float:
    """Error-correction leakage per clock cycle."""
    return pass_probability(table) * f_ec * ec_entropy(table)


@dataclass(frozen=True)
class ObservedStats:
    """All simulated observations at one intensity."""

    settings: SignalSettings
    channel: ChannelModel
    cond_probs: dict[int, np.ndarray] = field(repr=False)
    totals: np.ndarray = field(repr=False)

    def cross_click(self, n_tilde: int) -> np.ndarray:
        return cross_click_given_x(self.cond_probs[n_tilde], self.settings)

    @property
    def p_pass(self) -> float:
        return pass_probability(self.totals)

    def pass_given(self, n_tilde: int) -> float:
        return pass_probability(self.cond_probs[n_tilde])

    @property
    def p_pass_vacuum_contrib(self) -> float:
        return poisson_weight(0, self.settings) * self.pass_given(0)

    @property
    def ec_entropy(self) -> float:
        return ec_entropy(self.totals)

    def ec_cost(self, f_ec: float) -> float:
        return ec_cost(self.totals, f_ec)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n_tilde", "x", "k", "label", "probability"])
            for n in sorted(self.cond_probs):
                for x in range(N_SIGNALS):
                    for k in range(N_OUTCOMES):
                        w.writerow([n, x, k, str(LABELS[k]), repr(float(self.cond_probs[n][x, k]))])
            for x in range(N_SIGNALS):
                for k in range(N_OUTCOMES):
                    w.writerow(["total", x, k, str(LABELS[k]), repr(float(self.totals[x, k]))])


def observe(settings: SignalSettings, channel: ChannelModel, povm: PovmSet, n_max: int) -> ObservedStats:
    """Conditionals for n~ = 0..n_max plus closed-form totals.

    ``povm`` must model the physical detection (dark counts included, and the
    detector efficiency included whenever it is trusted).
    """
    cond = {n: conditional_probs(n, povm, channel, settings) for n in range(n_max + 1)}
    return ObservedStats(settings, channel, cond, total_statistics(settings, channel))


def vacuum_pass(settings: SignalSettings, channel: ChannelModel) -> float:
    """Pass probability of a vacuum pulse: dark counts only."""
    return exp(-settings.rescaled_intensity) * pass_probability(
        total_statistics(settings.with_intensity(0.0), channel)
    )
