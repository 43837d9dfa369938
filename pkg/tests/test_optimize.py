import json
from dataclasses import replace

import cvxpy as cp
import numpy as np
import pytest

from unbalbb84.keyrate import ProtocolConfig, pa_problem
from unbalbb84.optimize import (
    FWConfig,
    InfeasibleError,
    SolveLog,
    ReducedState,
    certified_linear_bound,
    choose_epsilon,
    dual_lower_bound,
    embed_state,
    face_certified_bound,
    frank_wolfe,
    gradient,
    is_feasible,
    minimal_radius,
    objective,
    perturbation_penalty,
    relax_constraints,
    solve_pa,
    weighted_linear_bound,
)
from unbalbb84.oracles import monolithic_objective, random_hermitian_like, random_state
from unbalbb84.simulate import conditional_state

ANCHOR = ProtocolConfig(kappa=1.0, eta=1.0, p_d=0.0, n_a=1, n_b=1)
LOSSY = ProtocolConfig(kappa=0.3, eta=0.5, p_d=8.5e-7, n_a=1, n_b=1)


@pytest.fixture(scope="module")
def anchor():
    return pa_problem(ANCHOR, 1)


@pytest.fixture(scope="module")
def lossy():
    return pa_problem(LOSSY, 1)


@pytest.fixture(scope="module")
def anchor_fw(anchor):
    cs, gz = anchor
    return frank_wolfe(cs, gz, FWConfig())


def generating_state(cfg, n, cs):
    return embed_state(conditional_state(n, cfg.channel, cfg.settings), cs.t, cs.n_flags)


def test_parameter_count():
    assert ReducedState.zeros(15, 28).n_params == 4048
    st = ReducedState.zeros(6, 28)
    assert st.c_diag.size == 4 * 28 and st.c_off.size == 4 * 3 // 2 * 28


def test_from_parameters_round_trip(rng):
    st = random_state(3, 28, rng)
    back = ReducedState.from_parameters(st.rho_low, st.c_diag, st.c_off)
    assert np.allclose(back.flags, st.flags)
    full = st.assemble()
    assert np.allclose(full, full.conj().T)


@pytest.mark.parametrize("n_b", [1, 2, 4])
def test_constraint_count(n_b):
    cs, _ = pa_problem(ProtocolConfig(kappa=0.5, eta=0.5, p_d=1e-3, n_a=1, n_b=n_b), 1)
    assert len(cs) == 133
    assert cs.eq_kind.count("prob") == 112
    assert cs.eq_kind.count("marginal") == 16
    assert cs.eq_kind.count("trace") == 1
    assert cs.n_ineq == 4


def test_flag_cutoff_enforced():
    with pytest.raises(Exception):
        pa_problem(ProtocolConfig(n_a=1, n_b=1), 2)


@pytest.mark.parametrize("cfg", [ANCHOR, LOSSY, ProtocolConfig(kappa=0.3, eta=0.4, p_d=1e-3, n_a=2, n_b=2)])
def test_generating_state_is_feasible(cfg):
    for n in range(1, cfg.n_a + 1):
        cs, _ = pa_problem(cfg, n)
        assert cs.violation(generating_state(cfg, n, cs)) <= 1e-10


def test_fast_inner_products_match_full_trace(lossy, rng):
    cs, _ = lossy
    for _ in range(100):
        st = random_state(cs.t, cs.n_flags, rng)
        g = random_hermitian_like(cs.t, cs.n_flags, rng)
        assert abs(g.inner(st) - np.trace(g.assemble() @ st.assemble()).real) < 1e-12
    st = random_state(cs.t, cs.n_flags, rng)
    full = st.assemble()
    naive = [np.trace(cs.eq_operator(i).assemble() @ full).real for i in range(cs.n_eq)]
    assert np.allclose(cs.eq_values(st), naive, atol=1e-12)


def test_relaxation_basics(lossy):
    cs, _ = lossy
    same = relax_constraints(cs, 0.0)
    assert same.radius == 0.0 and np.array_equal(same.eq_target, cs.eq_target)
    with pytest.raises(Exception):
        relax_constraints(cs, -1.0)
    st = generating_state(LOSSY, 1, cs)
    assert relax_constraints(cs, 1e-3).violation(st) <= 1e-10


def test_kraus_is_trace_non_increasing(lossy):
    _, gz = lossy
    ks = gz.kraus()
    tot = sum(k.conj().T @ k for k in ks)
    assert np.linalg.eigvalsh(np.eye(tot.shape[0]) - tot).min() >= -1e-10


def test_trace_non_increase(lossy, rng):
    _, gz = lossy
    for _ in range(20):
        st = random_state(gz.t, gz.n_flags, rng)
        out = sum(np.trace(lo).real + np.trace(fl, axis1=1, axis2=2).real.sum() for lo, fl in gz.apply(st))
        assert out <= st.trace() + 1e-10


def test_pinched_fixed_point(lossy, rng):
    _, gz = lossy
    # Alice diagonal: no coherence between key values survives
    p = rng.dirichlet(np.ones(4))
    g = rng.normal(size=(gz.t, gz.t)) + 1j * rng.normal(size=(gz.t, gz.t))
    sig = g @ g.conj().T
    flags = np.zeros((gz.n_flags, 4, 4), dtype=complex)
    flags[:, np.arange(4), np.arange(4)] = rng.random((gz.n_flags, 4))
    st = ReducedState(np.kron(np.diag(p), sig), flags)
    st = st.scale(1 / st.trace())
    assert abs(objective(st, gz)) < 1e-10
    grad = gradient(st, gz, 0.0)
    assert np.abs(grad.rho_low).max() < 1e-8 and np.abs(grad.flags).max() < 1e-8


def test_anchor_objective_at_generating_state(anchor):
    cs, gz = anchor
    st = generating_state(ANCHOR, 1, cs)
    assert abs(objective(st, gz) - 0.25) < 1e-10
    assert abs(monolithic_objective(st, gz) - 0.25) < 1e-10


def test_blockwise_matches_monolithic(lossy, rng):
    _, gz = lossy
    for i in range(10):
        st = random_state(gz.t, gz.n_flags, rng, rank=None if i % 2 else 2)
        for eps in (0.0, 1e-8, 1e-6):
            assert abs(objective(st, gz, eps) - monolithic_objective(st, gz, eps)) < 1e-9


def test_gradient_matches_finite_differences(lossy, rng):
    _, gz = lossy
    h = 1e-5
    for _ in range(5):
        st = random_state(gz.t, gz.n_flags, rng)
        d = random_hermitian_like(gz.t, gz.n_flags, rng)
        d = d.scale(1 / np.sqrt(d.inner(d)))
        fd = (objective(st + d.scale(h), gz) - objective(st - d.scale(h), gz)) / (2 * h)
        grad = gradient(st, gz, 0.0)
        an = grad.inner(d)
        assert abs(fd - an) <= 1e-4 * max(abs(an), 1e-8)
        assert np.allclose(grad.rho_low, grad.rho_low.conj().T, atol=1e-10)
        assert np.allclose(grad.flags, grad.flags.conj().transpose(0, 2, 1), atol=1e-10)


def test_perturbation_is_linear_in_epsilon(lossy, rng):
    _, gz = lossy
    st = random_state(gz.t, gz.n_flags, rng)
    f0 = objective(st, gz)
    d1 = abs(objective(st, gz, 1e-6) - f0)
    d2 = abs(objective(st, gz, 1e-7) - f0)
    assert 5 < d1 / d2 < 20
    assert d1 <= perturbation_penalty(1e-6, gz.out_dim)
    assert perturbation_penalty(0.0, gz.out_dim) == 0.0


def test_epsilon_ladder(anchor, anchor_fw, rng):
    cs, gz = anchor
    assert choose_epsilon(random_state(gz.t, gz.n_flags, rng), gz) == 0.0
    assert choose_epsilon(anchor_fw.state, gz) in (0.0, 1e-12, 1e-10, 1e-8, 1e-6)


def test_frank_wolfe_anchor(anchor_fw):
    assert abs(anchor_fw.value - 0.25) < 1e-3
    hist = anchor_fw.history
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_dual_bound_anchor(anchor, anchor_fw):
    cs, gz = anchor
    pair = dual_lower_bound(anchor_fw.state, cs, gz, FWConfig(), anchor_fw)
    assert 0.245 <= pair.lower <= pair.upper <= 0.25 + 1e-9
    assert pair.gap >= 0 and pair.violation <= 1e-8


def test_any_dual_point_certifies(lossy, rng):
    cs, gz = lossy
    st = generating_state(LOSSY, 1, cs)
    grad = gradient(random_state(gz.t, gz.n_flags, rng), gz, 0.0)
    feasible = grad.inner(st)
    for _ in range(10):
        y = rng.normal(size=cs.n_eq)
        z = np.abs(rng.normal(size=cs.n_ineq))
        assert certified_linear_bound(grad, cs, y, z) <= feasible + 1e-9
        assert weighted_linear_bound(grad, cs, y, z) <= feasible + 1e-9
        assert face_certified_bound(grad, cs, y, z)[0] <= feasible + 1e-9
    # the eigenvalue correction never helps: with the gradient itself as slack it vanishes
    y = np.zeros(cs.n_eq)
    z = np.zeros(cs.n_ineq)
    assert certified_linear_bound(grad, cs, y, z) <= 0.0


def test_lower_below_feasible_objectives(lossy):
    cs, gz = lossy
    fw = frank_wolfe(cs, gz, FWConfig(max_iters=60))
    pair = dual_lower_bound(fw.state, cs, gz, FWConfig(), fw)
    gen = generating_state(LOSSY, 1, cs)
    for lam in (0.0, 0.3, 0.7, 1.0):
        mix = gen.scale(lam) + fw.state.scale(1 - lam)
        assert pair.lower <= objective(mix, gz) + 1e-9
    assert pair.lower <= pair.upper + 1e-9


def shifted(cs, row, delta):
    tgt = cs.eq_target.copy()
    tgt[row] += delta
    out = replace(cs, eq_target=tgt)
    out.__dict__.pop("face", None)
    return out


def cvx_min_violation(cs):
    """Smallest uniform relaxation making the constraint set feasible."""
    d = cs.eq_low.shape[1]
    low = cp.Variable((d, d), hermitian=True)
    flags = [cp.Variable((4, 4), hermitian=True) for _ in range(cs.n_flags)]
    t = cp.Variable()
    cons = [low >> 0] + [f >> 0 for f in flags]

    def val(lo, fl):
        v = cp.real(cp.sum(cp.multiply(np.conj(lo), low)))
        for k in range(cs.n_flags):
            v = v + cp.real(cp.sum(cp.multiply(np.conj(fl[k]), flags[k])))
        return v

    for i in range(cs.n_eq):
        v = val(cs.eq_low[i], cs.eq_flag[i]) - cs.eq_target[i]
        cons += [v <= t, v >= -t] if cs.relaxable[i] else [v == 0]
    for i in range(cs.n_ineq):
        cons.append(val(cs.ineq_low[i], cs.ineq_flag[i]) >= cs.ineq_target[i])
    cp.Problem(cp.Minimize(t), cons).solve(solver="CLARABEL")
    return float(t.value)


def test_minimal_radius_matches_feasibility_oracle(lossy):
    cs, _ = lossy
    bad = shifted(cs, 5, 3e-3)
    assert not is_feasible(bad, 0.0)
    r = minimal_radius(bad)
    t_star = cvx_min_violation(bad)
    assert t_star > 1e-5
    assert t_star - 1e-8 <= r <= 2 * t_star + 1e-8
    assert is_feasible(bad, r)
    assert minimal_radius(cs) == 0.0


def test_infeasible_without_relaxation(lossy):
    cs, gz = lossy
    bad = shifted(cs, 5, 3e-3)
    with pytest.raises(InfeasibleError):
        solve_pa(bad, gz, FWConfig(allow_relaxation=False))


def test_relaxed_bound_is_lower(anchor):
    cs, gz = anchor
    cfg = FWConfig(max_iters=100)
    tight = solve_pa(cs, gz, cfg)
    loose = solve_pa(relax_constraints(cs, 1e-4), gz, cfg)
    assert loose.lower <= tight.lower + 1e-9
    assert loose.radius == 1e-4


def test_solve_log_records_events(anchor):
    cs, gz = anchor
    log = SolveLog(1)
    solve_pa(cs, gz, FWConfig(max_iters=30), log)
    rec = json.loads(log.to_json())
    kinds = [e["event"] for e in rec["events"]]
    assert rec["n_tilde"] == 1
    assert kinds[0] == "phase_one" and kinds[-1] == "bound"
    assert rec["events"][-1]["lower"] <= rec["events"][-1]["upper"] + 1e-9
