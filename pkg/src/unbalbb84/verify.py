"""Property suite behind ``--verify-only``.

Every property returns a pass flag and a short detail string; failures are
results, not exceptions. ``VerifySettings.corrupt_povm`` is a negative
control that breaks one POVM element before the checks run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fock import FockBasis, mode_monomial_state
from .keyrate import ProtocolConfig, pa_problem
from .optimize import FWConfig, gradient, objective, solve_pa
from .oracles import (
    creation_monomial_oracle,
    cross_click_formula,
    formula_elements,
    library_elements,
    monolithic_objective,
    monte_carlo_postprocess,
    random_hermitian_like,
    random_state,
)
from .povm import (
    N_OUTCOMES,
    PovmSet,
    build_ideal_povm,
    check_povm,
    cross_click_diagonal,
    dark_count_postprocess,
    measurement_povm,
    postprocess_matrix,
)
from .simulate import ChannelModel, fock_sum_statistics, total_statistics
from .source import SignalSettings, poisson_truncation
from .squash import p_cc_vacuum, p_min_cc, weight_lower_bound


@dataclass(frozen=True)
class VerifySettings:
    seed: int = 20240601
    xis: tuple[float, ...] = (0.5, 0.55, 0.77, 0.91)
    p_ds: tuple[float, ...] = (0.0, 1e-3, 0.1, 8.5e-7)
    cutoff: int = 6
    n_random: int = 200
    mc_samples: int = 20000
    corrupt_povm: bool = False


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _settings(xi: float) -> SignalSettings:
    return SignalSettings(1.0 / xi - 1.0)


def _corrupt(povm: PovmSet) -> PovmSet:
    blocks = list(povm.blocks)
    blk = blocks[0].copy()
    blk[0] = blk[0] * 1.05  # vacuum no-click
    blocks[0] = blk
    return replace(povm, blocks=tuple(blocks))


def _povms(vs: VerifySettings):
    for xi in vs.xis:
        for p_d in vs.p_ds:
            povm = measurement_povm(_settings(xi), vs.cutoff, p_d)
            yield xi, p_d, _corrupt(povm) if vs.corrupt_povm else povm


def prop_completeness(vs):
    worst = max(check_povm(p)["completeness"] for _, _, p in _povms(vs))
    return worst <= 1e-10, f"max |sum_k P_k - 1| = {worst:.2e}"


def prop_positivity(vs):
    worst = min(check_povm(p)["min_eigenvalue"] for _, _, p in _povms(vs))
    return worst >= -1e-10, f"min eigenvalue {worst:.2e}"


def prop_count(vs):
    counts = {len(p) for _, _, p in _povms(vs)}
    return counts == {N_OUTCOMES}, f"element counts {sorted(counts)}"


def prop_dark_count_formulas(vs):
    worst = 0.0
    for xi in vs.xis:
        ideal = build_ideal_povm(_settings(xi), vs.cutoff)
        for p_d in vs.p_ds:
            proc = dark_count_postprocess(ideal, p_d)
            for n in range(vs.cutoff + 1):
                for b in (0, 1):
                    f, lib = formula_elements(ideal, p_d, n, b), library_elements(proc, n, b)
                    worst = max(worst, max(float(np.abs(f[k] - lib[k]).max()) for k in f))
    return worst <= 1e-12, f"max entry deviation {worst:.2e}"


def prop_cross_click(vs):
    worst = 0.0
    for xi in vs.xis:
        ideal = build_ideal_povm(_settings(xi), vs.cutoff)
        for p_d in vs.p_ds:
            diag = cross_click_diagonal(dark_count_postprocess(ideal, p_d))
            worst = max(worst, abs(float(diag[0][0]) - p_cc_vacuum(p_d)))
            for n in range(vs.cutoff + 1):
                worst = max(worst, float(np.abs(diag[n] - cross_click_formula(n, xi, p_d)).max()))
                if n >= 1:
                    worst = max(worst, abs(float(diag[n].min()) - p_min_cc(n, xi, p_d)))
    return worst <= 1e-12, f"max deviation {worst:.2e}"


def prop_monte_carlo(vs):
    rng = np.random.default_rng(vs.seed)
    worst = 0.0
    for p_d in (0.05, 0.2):
        est = monte_carlo_postprocess(p_d, vs.mc_samples, rng)
        exact = postprocess_matrix(p_d)
        sigma = np.sqrt(np.maximum(exact * (1 - exact), 1.0 / vs.mc_samples) / vs.mc_samples)
        worst = max(worst, float(np.max(np.abs(est - exact) / sigma)))
    return worst <= 5.0, f"max deviation {worst:.2f} sigma"


def prop_monomial(vs):
    basis = FockBasis(vs.cutoff)
    rng = np.random.default_rng(vs.seed)
    worst = 0.0
    for n in range(vs.cutoff + 1):
        c1, c2 = rng.normal(size=2) + 1j * rng.normal(size=2)
        a = mode_monomial_state(c1, c2, n, basis)
        b = creation_monomial_oracle(c1, c2, n, basis)
        worst = max(worst, float(np.abs(a - b).max() / max(1.0, np.abs(b).max())))
    return worst <= 1e-12, f"max relative deviation {worst:.2e}"


def prop_subspace_bound(vs):
    rng = np.random.default_rng(vs.seed)
    basis = FockBasis(vs.cutoff)
    fails, tighter = 0, True
    for xi in vs.xis:
        for p_d in vs.p_ds:
            povm = measurement_povm(_settings(xi), vs.cutoff, p_d)
            cc = np.concatenate(cross_click_diagonal(povm))
            for n_b in (1, 2):
                low = basis.total_number <= n_b
                for _ in range(vs.n_random):
                    w = rng.dirichlet(np.full(basis.dim, 0.3))
                    p_cc = float(cc @ w)
                    bound = weight_lower_bound(p_cc, n_b, xi, p_d).bound
                    fails += bound > w[low].sum() + 1e-12
                    tighter &= bound >= weight_lower_bound(p_cc, n_b, xi, 0.0, "dark-count-free").bound - 1e-12
    return fails == 0 and tighter, f"{fails} violations, analytic >= dark-count-free: {tighter}"


def prop_simulation(vs):
    worst = 0.0
    for kappa, eta, p_d, mu in [(1.0, 1.0, 0.0, 0.1), (0.3, 0.5, 8.5e-7, 0.4), (0.5, 0.1, 1e-3, 0.8)]:
        st = SignalSettings(kappa).with_intensity(mu)
        ch = ChannelModel(eta, p_d=p_d)
        povm = measurement_povm(st, poisson_truncation(st.rescaled_intensity, 1e-12), p_d)
        table, tail = fock_sum_statistics(st, ch, povm, 1e-12)
        worst = max(worst, float(np.abs(table - total_statistics(st, ch)).max()) - tail)
    return worst <= 1e-12, f"max excess over tail {worst:.2e}"


def _small_problem():
    cfg = ProtocolConfig(kappa=0.3, eta=0.5, p_d=8.5e-7, n_a=1, n_b=1)
    return pa_problem(cfg, 1)


def prop_objective(vs):
    _, gz = _small_problem()
    rng = np.random.default_rng(vs.seed)
    worst = 0.0
    for i in range(10):
        st = random_state(gz.t, gz.n_flags, rng, rank=None if i % 2 else 3)
        for eps in (0.0, 1e-6):
            worst = max(worst, abs(objective(st, gz, eps) - monolithic_objective(st, gz, eps)))
    return worst <= 1e-9, f"max |blockwise - monolithic| {worst:.2e} bits"


def prop_gradient(vs):
    _, gz = _small_problem()
    rng = np.random.default_rng(vs.seed)
    worst = 0.0
    h = 1e-5
    for _ in range(5):
        st = random_state(gz.t, gz.n_flags, rng)
        d = random_hermitian_like(gz.t, gz.n_flags, rng)
        d = d.scale(1.0 / np.sqrt(d.inner(d)))
        fd = (objective(st + d.scale(h), gz) - objective(st - d.scale(h), gz)) / (2 * h)
        an = gradient(st, gz, 0.0).inner(d)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-8))
    return worst <= 1e-4, f"max relative deviation {worst:.2e}"


def prop_trace_nonincrease(vs):
    _, gz = _small_problem()
    rng = np.random.default_rng(vs.seed)
    worst = -np.inf
    for _ in range(20):
        st = random_state(gz.t, gz.n_flags, rng)
        out = sum(np.trace(low).real + np.trace(fl, axis1=1, axis2=2).real.sum() for low, fl in gz.apply(st))
        worst = max(worst, out - st.trace())
    return worst <= 1e-10, f"max Tr G(rho) - Tr rho = {worst:.2e}"


def prop_bracket(vs):
    cfg = ProtocolConfig(kappa=1.0, eta=1.0, p_d=0.0, n_a=1, n_b=1)
    cs, gz = pa_problem(cfg, 1)
    pair = solve_pa(cs, gz, FWConfig())
    ok = pair.lower <= pair.upper and 0.245 <= pair.lower and pair.upper <= 0.25 + 1e-9
    return ok, f"lower {pair.lower:.9f} upper {pair.upper:.9f} bits"


PROPERTIES = {
    "povm completeness": prop_completeness,
    "povm positivity": prop_positivity,
    "povm element count": prop_count,
    "dark-count post-processing formulas": prop_dark_count_formulas,
    "cross-click floors": prop_cross_click,
    "dark-count Monte Carlo": prop_monte_carlo,
    "two-mode monomial states": prop_monomial,
    "subspace weight bound soundness": prop_subspace_bound,
    "closed-form statistics vs Fock sum": prop_simulation,
    "blockwise vs monolithic objective": prop_objective,
    "gradient vs finite differences": prop_gradient,
    "G map trace non-increase": prop_trace_nonincrease,
    "certified bracket on the one-photon anchor": prop_bracket,
}


def run_verify(vs: VerifySettings = VerifySettings(), names=None) -> list[PropertyResult]:
    out = []
    for name, func in PROPERTIES.items():
        if names is not None and name not in names:
            continue
        try:
            ok, detail = func(vs)
        except Exception as exc:  # a crashing check is a failed property
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(PropertyResult(name, bool(ok), detail))
    return out
