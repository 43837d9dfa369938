"""Key-rate assembly: vacuum term, certified PA terms, error-correction cost.

The PA terms depend on the channel, the source imbalance and the trust
model but not on the intensity, so they are solved once per configuration
and reused across the whole intensity scan.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .fock import DomainError
from .optimize import (
    BoundPair,
    FWConfig,
    SolveLog,
    build_constraints,
    build_gz_maps,
    solve_pa,
)
from .povm import measurement_povm
from .simulate import (
    ChannelModel,
    conditional_probs,
    cross_click_given_x,
    ec_cost,
    ec_entropy,
    pass_probability,
    total_statistics,
    vacuum_pass,
)
from .source import SignalSettings, poisson_weight
from .squash import numeric_cross_click, squash_povm, weight_lower_bound

G_FAMILIES = ("constraint", "dark-count-free")
EXTRA_SECTORS = 3  # sectors above N_B kept for the numeric cross-click floor


class UndefinedRatioError(ZeroDivisionError):
    """r21 requested while the one-photon PA bound is zero."""


@dataclass(frozen=True)
class ProtocolConfig:
    """Everything that fixes the PA optimisations (the intensity does not)."""

    kappa: float = 1.0
    eta: float = 1.0
    eta_det: float = 1.0
    p_d: float = 0.0
    trust_dark_counts: bool = True
    trust_efficiency: bool = False
    n_a: int = 1
    n_b: int = 2
    f_ec: float = 1.22
    g_family: str = "constraint"
    fw: FWConfig = field(default_factory=FWConfig)

    def __post_init__(self):
        if self.n_a < 0 or self.n_b < 0:
            raise DomainError("photon cutoffs must be non-negative")
        if self.n_a > self.n_b:
            raise DomainError(f"N_A={self.n_a} exceeds N_B={self.n_b}")
        if self.f_ec < 1.0:
            raise DomainError("f_EC must be at least 1")
        if self.g_family not in G_FAMILIES:
            raise DomainError(f"unknown G family {self.g_family!r}")
        self.channel  # validates eta, eta_det, p_d

    @property
    def channel(self) -> ChannelModel:
        return ChannelModel(self.eta, self.eta_det, self.p_d, self.trust_efficiency, self.trust_dark_counts)

    @property
    def settings(self) -> SignalSettings:
        return SignalSettings(self.kappa)

    @property
    def bound_mode(self) -> str:
        if self.trust_efficiency:
            return "numeric"
        return "trusted-analytic" if self.trust_dark_counts else "dark-count-free"

    @property
    def cutoff(self) -> int:
        return self.n_b + EXTRA_SECTORS

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("fw")
        return d


@lru_cache(maxsize=64)
def _povms(cfg: ProtocolConfig):
    """(physical POVM for the statistics, POVM in the constraints, POVM for G)."""
    ch = cfg.channel
    physical = measurement_povm(cfg.settings, cfg.cutoff, cfg.p_d, ch.trusted_eta_det)
    clean = measurement_povm(cfg.settings, cfg.cutoff, 0.0, ch.trusted_eta_det) if cfg.p_d else physical
    model = physical if cfg.trust_dark_counts else clean
    g_povm = model if cfg.g_family == "constraint" else clean
    return physical, model, g_povm


def pa_problem(cfg: ProtocolConfig, n_tilde: int):
    """Constraint set and G/Z maps for one photon number."""
    physical, model, g_povm = _povms(cfg)
    settings = cfg.settings
    cond = conditional_probs(n_tilde, physical, cfg.channel, settings)
    numeric = numeric_cross_click(model, cfg.n_b) if cfg.bound_mode == "numeric" else None
    # the cross-click bound uses the dark-count rate only when it is part of the model
    p_d_model = cfg.p_d if cfg.trust_dark_counts else 0.0
    bounds = [
        weight_lower_bound(p, cfg.n_b, settings.xi, p_d_model, cfg.bound_mode, numeric)
        for p in cross_click_given_x(cond, settings)
    ]
    squashed = squash_povm(model, cfg.n_b)
    cs = build_constraints(n_tilde, cond, squashed, bounds, settings)
    g_sq = squashed if g_povm is model else squash_povm(g_povm, cfg.n_b)
    return cs, build_gz_maps(g_sq, cfg.g_family)


@lru_cache(maxsize=64)
def _pa_terms_cached(cfg: ProtocolConfig) -> tuple[tuple[BoundPair, ...], tuple[str, ...]]:
    pairs, logs = [], []
    for n in range(1, cfg.n_a + 1):
        cs, gz = pa_problem(cfg, n)
        log = SolveLog(n)
        pairs.append(solve_pa(cs, gz, cfg.fw, log))
        logs.append(log.to_json())
    return tuple(pairs), tuple(logs)


def pa_terms(cfg: ProtocolConfig) -> list[BoundPair]:
    """Certified PA bounds for n~ = 1..N_A (cached per configuration)."""
    return list(_pa_terms_cached(cfg)[0])


def pa_logs(cfg: ProtocolConfig) -> list[str]:
    """JSON solve logs matching ``pa_terms``."""
    return list(_pa_terms_cached(cfg)[1])


@dataclass(frozen=True)
class RateTerms:
    """Ingredients of the rate at one intensity."""

    mu: float
    photon_probs: tuple[float, ...]  # p_n for n = 1..N_A
    p_pass_vacuum: float
    p_pass: float
    delta_ec: float

    def rate(self, pa_lower: list[float]) -> float:
        signal = sum(p * v for p, v in zip(self.photon_probs, pa_lower))
        return self.p_pass_vacuum + signal - self.p_pass * self.delta_ec


def rate_terms(mu: float, cfg: ProtocolConfig) -> RateTerms:
    """Observables at mean photon number ``mu`` (first pulse, |alpha|^2)."""
    if mu < 0:
        raise DomainError("intensity must be non-negative")
    settings = cfg.settings.with_intensity(mu)
    ch = cfg.channel
    totals = total_statistics(settings, ch)
    p_pass = pass_probability(totals)
    delta = cfg.f_ec * ec_entropy(totals) if p_pass > 0 else 0.0
    probs = tuple(poisson_weight(n, settings) for n in range(1, cfg.n_a + 1))
    return RateTerms(mu, probs, vacuum_pass(settings, ch), p_pass, delta)


def key_rate(mu: float, pa_list: list[BoundPair], cfg: ProtocolConfig) -> float:
    """Raw (unclamped) lower bound on the asymptotic rate in bits per clock cycle."""
    return rate_terms(mu, cfg).rate([p.lower for p in pa_list])


def default_grid(lo: float = 0.01, hi: float = 2.0, points: int = 60) -> np.ndarray:
    return np.geomspace(lo, hi, points)


def optimize_intensity(pa_list: list[BoundPair], cfg: ProtocolConfig, grid=None) -> tuple[float, float]:
    """Grid scan of |alpha|^2 followed by a golden-section pass around the best point."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DomainError("intensity grid is empty")
    values = np.array([key_rate(mu, pa_list, cfg) for mu in grid])
    i = int(np.argmax(values))
    best_mu, best = float(grid[i]), float(values[i])
    if 0 < i < grid.size - 1:
        lo, mid, hi = np.log(grid[i - 1]), np.log(grid[i]), np.log(grid[i + 1])
        res = minimize_scalar(
            lambda s: -key_rate(float(np.exp(s)), pa_list, cfg),
            bracket=(lo, mid, hi),
            method="golden",
            options={"xtol": 1e-6},
        )
        mu = float(np.exp(res.x))
        if lo <= res.x <= hi and -res.fun > best:
            best_mu, best = mu, float(-res.fun)
    return best_mu, best


def r21_ratio(pa_list: list[BoundPair], which: str = "lower") -> float:
    if len(pa_list) < 2:
        raise DomainError("r21 needs the one- and two-photon terms")
    one, two = getattr(pa_list[0], which), getattr(pa_list[1], which)
    if one <= 0:
        raise UndefinedRatioError("one-photon PA bound is zero")
    return max(two, 0.0) / one


@dataclass(frozen=True)
class KeyRateReport:
    config: ProtocolConfig
    pa: tuple[BoundPair, ...]
    mu_opt: float
    photon_probs: tuple[float, ...]
    p_pass_vacuum: float
    p_pass: float
    delta_ec: float
    rate_raw: float
    r21: float | None
    r21_upper: float | None

    @property
    def rate(self) -> float:
        return max(self.rate_raw, 0.0)

    def reconstruct(self) -> float:
        signal = sum(p * b.lower for p, b in zip(self.photon_probs, self.pa))
        return self.p_pass_vacuum + signal - self.p_pass * self.delta_ec

    def row(self) -> dict:
        c = self.config
        out = {
            "kappa": c.kappa,
            "eta": c.eta,
            "eta_det": c.eta_det,
            "p_d": c.p_d,
            "trust_dark_counts": int(c.trust_dark_counts),
            "trust_efficiency": int(c.trust_efficiency),
            "n_a": c.n_a,
            "n_b": c.n_b,
            "f_ec": c.f_ec,
            "g_family": c.g_family,
            "rate_bits_per_cycle": self.rate,
            "rate_raw_bits_per_cycle": self.rate_raw,
            "mu_opt_photons": self.mu_opt,
            "p_pass_vacuum": self.p_pass_vacuum,
            "p_pass": self.p_pass,
            "delta_ec_bits": self.delta_ec,
            "r21": "" if self.r21 is None else self.r21,
        }
        for n, b in enumerate(self.pa, start=1):
            out[f"pa{n}_lower_bits"] = b.lower
            out[f"pa{n}_upper_bits"] = b.upper
            out[f"pa{n}_gap_bits"] = b.gap
            out[f"pa{n}_violation"] = b.violation
            out[f"pa{n}_radius"] = b.radius
            out[f"pa{n}_status"] = b.status
        return out

    def to_text(self) -> str:
        c = self.config
        lines = [
            f"kappa={c.kappa} eta={c.eta} eta_det={c.eta_det} p_d={c.p_d} "
            f"trusted_dark_counts={c.trust_dark_counts} trusted_efficiency={c.trust_efficiency}",
            f"N_A={c.n_a} N_B={c.n_b} f_EC={c.f_ec} G family={c.g_family}",
        ]
        for n, b in enumerate(self.pa, start=1):
            lines.append(
                f"  PA[{n}]  lower={b.lower:.9f}  upper={b.upper:.9f}  gap={b.gap:.2e}  "
                f"violation={b.violation:.2e}  radius={b.radius:.2e}  status={b.status}"
            )
        lines += [
            f"  |alpha|^2 opt = {self.mu_opt:.6f}",
            f"  p_pass = {self.p_pass:.6e}   vacuum part = {self.p_pass_vacuum:.6e}   delta_EC = {self.delta_ec:.6f} bits",
            f"  rate = {self.rate:.6e} bits/cycle (raw {self.rate_raw:.6e})",
        ]
        if self.r21 is not None:
            lines.append(f"  r21 = {self.r21:.6f} (upper/upper {self.r21_upper:.6f})")
        return "\n".join(lines)


def report_csv(reports: list[KeyRateReport]) -> str:
    """CSV text for a list of reports; columns are the union in first-seen order."""
    cols: list[str] = []
    for r in reports:
        for k in r.row():
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", restval="")
    w.writeheader()
    for r in reports:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})
    return buf.getvalue()


def evaluate(cfg: ProtocolConfig, grid=None) -> KeyRateReport:
    """Solve the PA terms, optimise the intensity and assemble the report."""
    pa = pa_terms(cfg)
    mu, _ = optimize_intensity(pa, cfg, grid)
    terms = rate_terms(mu, cfg)
    raw = terms.rate([b.lower for b in pa])
    r21 = r21_up = None
    if len(pa) >= 2:
        try:
            r21, r21_up = r21_ratio(pa), r21_ratio(pa, "upper")
        except UndefinedRatioError:
            pass
    return KeyRateReport(
        cfg, tuple(pa), float(mu), terms.photon_probs, float(terms.p_pass_vacuum), float(terms.p_pass), float(terms.delta_ec), float(raw), r21, r21_up
    )


def ec_cost_at(mu: float, cfg: ProtocolConfig) -> float:
    """p_pass * delta_EC at one intensity."""
    return ec_cost(total_statistics(cfg.settings.with_intensity(mu), cfg.channel), cfg.f_ec)
