import cvxpy as cp
import numpy as np
import pytest

from unbalbb84.sdp import Cone, Problem, solve


def random_problem(rng, m=6, count=2, d=3, p=3):
    def herm():
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        return g + g.conj().T

    a_mats = np.array([[herm() for _ in range(count)] for _ in range(m)])
    a_lin = rng.normal(size=(m, p))
    x0 = Cone((np.array([np.eye(d) for _ in range(count)], dtype=complex),), np.ones(p))
    g = rng.normal(size=(count, d, d)) + 1j * rng.normal(size=(count, d, d))
    c = Cone((g @ g.conj().transpose(0, 2, 1) + 0.1 * np.eye(d),), rng.random(p) + 0.1)
    prob = Problem((a_mats,), a_lin, np.zeros(m), c)
    prob.b = prob.apply(x0)
    return prob


def cvx_value(prob):
    mats = prob.a_mats[0]
    m, count, d, _ = mats.shape
    xs = [cp.Variable((d, d), hermitian=True) for _ in range(count)]
    lin = cp.Variable(prob.c.lin.size)
    rows = []
    for i in range(m):
        v = prob.a_lin[i] @ lin
        for k in range(count):
            v = v + cp.real(cp.sum(cp.multiply(np.conj(mats[i, k]), xs[k])))
        rows.append(v == prob.b[i])
    obj = prob.c.lin @ lin + sum(cp.real(cp.sum(cp.multiply(np.conj(prob.c.mats[0][k]), xs[k]))) for k in range(count))
    pr = cp.Problem(cp.Minimize(obj), rows + [x >> 0 for x in xs] + [lin >= 0])
    pr.solve(solver="CLARABEL")
    return pr.value


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_matches_cvxpy(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng)
    sol = solve(prob, tol=1e-10)
    # "inaccurate" marks a stall short of tol, still far inside these checks
    assert sol.status in ("optimal", "inaccurate")
    ref = cvx_value(prob)
    assert abs(sol.primal_objective - ref) <= 1e-6 * max(1.0, abs(ref))
    assert 0.0 <= sol.primal_objective - sol.dual_objective <= 1e-7 * max(1.0, abs(ref))
    # primal and dual feasibility of the returned point
    assert np.abs(prob.apply(sol.x) - prob.b).max() < 1e-7
    slack = prob.c - prob.adjoint(sol.y)
    assert np.linalg.eigvalsh(slack.hermitian().mats[0]).min() > -1e-7
    assert slack.lin.min() > -1e-7


def test_cone_algebra(rng):
    a = Cone((rng.normal(size=(2, 3, 3)),), rng.random(2))
    b = Cone((rng.normal(size=(2, 3, 3)),), rng.random(2))
    assert np.isclose((a + b).inner(a), a.inner(a) + b.inner(a))
    assert np.isclose(a.scale(2.0).norm(), 2 * a.norm())
    assert np.allclose((a - a).lin, 0)
