"""Small dense primal-dual interior-point solver for linear SDPs.

Standard form::

    min  <C, X>   s.t.  <A_i, X> = b_i,  X in K

where K is a product of Hermitian PSD blocks and a nonnegative orthant.
Blocks of equal size are stored together as a stack of shape (count, d, d) so
that linear algebra runs batched. Inner products are Re Tr(A X) on matrix
parts and the dot product on the orthant. The search direction is HKM with a
Mehrotra predictor-corrector, started from an infeasible interior point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

STEP_FRACTION = 0.98
STALL_ITERS = 5


@dataclass
class Cone:
    """Point of the cone: a tuple of block stacks plus an orthant vector."""

    mats: tuple[np.ndarray, ...]
    lin: np.ndarray

    def _zip(self, other, op):
        return Cone(tuple(op(a, b) for a, b in zip(self.mats, other.mats)), op(self.lin, other.lin))

    def __add__(self, other: "Cone") -> "Cone":
        return self._zip(other, np.add)

    def __sub__(self, other: "Cone") -> "Cone":
        return self._zip(other, np.subtract)

    def scale(self, a: float) -> "Cone":
        return Cone(tuple(a * m for m in self.mats), a * self.lin)

    def inner(self, other: "Cone") -> float:
        val = sum(float(np.real(np.vdot(a, b))) for a, b in zip(self.mats, other.mats))
        return val + float(self.lin @ other.lin)

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def hermitian(self) -> "Cone":
        return Cone(tuple(0.5 * (m + m.conj().transpose(0, 2, 1)) for m in self.mats), self.lin)

    def matmul(self, other: "Cone") -> "Cone":
        """Blockwise matrix product (elementwise on the orthant)."""
        return Cone(tuple(np.matmul(a, b) for a, b in zip(self.mats, other.mats)), self.lin * other.lin)

    def inverse(self) -> "Cone":
        return Cone(tuple(np.linalg.inv(m) for m in self.mats), 1.0 / self.lin)


@dataclass
class Problem:
    a_mats: tuple[np.ndarray, ...]  # each (m, count, d, d)
    a_lin: np.ndarray  # (m, p)
    b: np.ndarray
    c: Cone

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def degree(self) -> int:
        return sum(c.shape[0] * c.shape[1] for c in self.c.mats) + self.c.lin.size

    def apply(self, x: Cone) -> np.ndarray:
        m = self.m
        out = self.a_lin @ x.lin
        for a, xm in zip(self.a_mats, x.mats):
            out = out + np.real(a.reshape(m, -1).conj() @ xm.ravel())
        return out

    def adjoint(self, y: np.ndarray) -> Cone:
        return Cone(tuple(np.tensordot(y, a, axes=1) for a in self.a_mats), self.a_lin.T @ y)

    def row_norms(self) -> np.ndarray:
        sq = np.sum(self.a_lin**2, axis=1)
        for a in self.a_mats:
            sq = sq + np.sum(np.abs(a.reshape(self.m, -1)) ** 2, axis=1)
        return np.sqrt(sq)


@dataclass
class Solution:
    x: Cone
    y: np.ndarray
    z: Cone
    status: str
    iterations: int
    primal_objective: float
    dual_objective: float
    primal_infeasibility: float
    dual_infeasibility: float


def _identity_like(c: Cone, scale: float) -> Cone:
    mats = tuple(np.broadcast_to(np.eye(m.shape[1], dtype=complex), m.shape) * scale for m in c.mats)
    return Cone(mats, np.full(c.lin.size, scale))


def _inv_chol(mat: np.ndarray) -> np.ndarray:
    """L^{-1} with mat = L L^dagger for a stack, falling back to mat^{-1/2}."""
    try:
        chol = np.linalg.cholesky(mat)
        eye = np.broadcast_to(np.eye(mat.shape[-1]), mat.shape)
        return np.linalg.solve(chol, eye)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(mat)
        w = np.maximum(w, 1e-300)
        return (v / np.sqrt(w)[..., None, :]) @ v.conj().swapaxes(-1, -2)


def _max_step(x: Cone, dx: Cone) -> float:
    """Largest a with x + a dx still in the cone (inf when unbounded)."""
    steps = [np.inf]
    for mat, dmat in zip(x.mats, dx.mats):
        li = _inv_chol(mat)
        lam = np.linalg.eigvalsh(li @ dmat @ li.conj().swapaxes(-1, -2)).min()
        if lam < 0:
            steps.append(-1.0 / lam)
    neg = dx.lin < 0
    if np.any(neg):
        steps.append(float(np.min(-x.lin[neg] / dx.lin[neg])))
    return min(steps)


def _schur(prob: Problem, x: Cone, zinv: Cone) -> np.ndarray:
    """M_ij = <A_i, X A_j Z^{-1}> summed over blocks."""
    m = prob.m
    mat = (prob.a_lin * (x.lin * zinv.lin)) @ prob.a_lin.T
    for a, xm, zm in zip(prob.a_mats, x.mats, zinv.mats):
        w = np.matmul(np.matmul(xm[None], a), zm[None])
        mat = mat + np.real(a.reshape(m, -1) @ w.swapaxes(-1, -2).reshape(m, -1).T)
    return 0.5 * (mat + mat.T)


def _factor(mat: np.ndarray):
    """Cholesky factor of the diagonally equilibrated Schur complement."""
    diag = np.diag(mat)
    scale = np.where(diag > 1e-200, 1.0 / np.sqrt(np.where(diag > 1e-200, diag, 1.0)), 1.0)
    scaled = mat * scale[:, None] * scale[None, :]
    reg = 0.0
    for _ in range(8):
        try:
            return sla.cho_factor(scaled + reg * np.eye(mat.shape[0]), check_finite=False), scale, mat
        except np.linalg.LinAlgError:
            reg = 1e-14 if reg == 0.0 else reg * 100
    raise np.linalg.LinAlgError("Schur complement is not positive definite")


def _schur_solve(fac, rhs: np.ndarray, refine: int = 2) -> np.ndarray:
    chol, scale, mat = fac
    sol = scale * sla.cho_solve(chol, scale * rhs, check_finite=False)
    for _ in range(refine):
        sol = sol + scale * sla.cho_solve(chol, scale * (rhs - mat @ sol), check_finite=False)
    return sol


def solve(prob: Problem, tol: float = 1e-9, max_iters: int = 100, callback=None) -> Solution:
    """Return the best iterate seen.

    ``status`` is one of optimal, inaccurate (best residual below sqrt(tol)),
    stalled, diverged, numerical_error or max_iterations. ``callback`` is
    called as callback(iteration, pinf, dinf, gap, mu) for tracing.
    """
    n_deg = prob.degree
    norm_b = float(np.linalg.norm(prob.b))
    norm_c = prob.c.norm()
    a_norms = prob.row_norms()
    n_big = max([c.shape[1] for c in prob.c.mats] + [1])
    sx = max(10.0, np.sqrt(n_big), float(np.max((1.0 + np.abs(prob.b)) / (1.0 + a_norms))) * n_big)
    sz = max(10.0, np.sqrt(n_big), float(np.max(a_norms)), norm_c)
    x = _identity_like(prob.c, sx)
    z = _identity_like(prob.c, sz)
    y = np.zeros(prob.m)

    best = None
    since_best = 0
    status = "max_iterations"
    it = 0
    for it in range(1, max_iters + 1):
        rp = prob.b - prob.apply(x)
        rd = prob.c - prob.adjoint(y) - z
        mu = x.inner(z) / n_deg
        pobj = prob.c.inner(x)
        dobj = float(prob.b @ y)
        pinf = float(np.linalg.norm(rp)) / (1.0 + norm_b)
        dinf = rd.norm() / (1.0 + norm_c)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        score = max(pinf, dinf, gap)
        if callback is not None:
            callback(it, pinf, dinf, gap, mu)
        if best is None or score < best[0]:
            best = (score, x, y, z, pobj, dobj, pinf, dinf)
            since_best = 0
        else:
            since_best += 1
        if score < tol:
            status = "optimal"
            break
        if since_best >= STALL_ITERS:
            status = "inaccurate" if best[0] < np.sqrt(tol) else "stalled"
            break
        if not np.isfinite(score) or np.linalg.norm(y) > 1e14:
            status = "diverged"
            break

        zinv = z.inverse()
        try:
            chol = _factor(_schur(prob, x, zinv))
        except np.linalg.LinAlgError:
            status = "numerical_error"
            break
        x_rd_zinv = x.matmul(rd).matmul(zinv)

        def direction(sigma_mu: float, corr: Cone | None):
            rc_zinv = zinv.scale(sigma_mu) - x
            if corr is not None:
                rc_zinv = rc_zinv - corr.matmul(zinv)
            rhs = rp - prob.apply(rc_zinv - x_rd_zinv)
            dy = _schur_solve(chol, rhs)
            dz = rd - prob.adjoint(dy)
            dx = (rc_zinv - x.matmul(dz).matmul(zinv)).hermitian()
            return dx, dy, dz

        dx_a, dy_a, dz_a = direction(0.0, None)
        ap = min(1.0, _max_step(x, dx_a))
        ad = min(1.0, _max_step(z, dz_a))
        mu_aff = (x + dx_a.scale(ap)).inner(z + dz_a.scale(ad)) / n_deg
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        dx, dy, dz = direction(sigma * mu, dx_a.matmul(dz_a))
        ap = min(1.0, STEP_FRACTION * _max_step(x, dx))
        ad = min(1.0, STEP_FRACTION * _max_step(z, dz))
        x = (x + dx.scale(ap)).hermitian()
        y = y + ad * dy
        z = (z + dz.scale(ad)).hermitian()

    if status == "max_iterations" and best[0] < np.sqrt(tol):
        status = "inaccurate"
    _, x, y, z, pobj, dobj, pinf, dinf = best
    return Solution(x, y, z, status, it, pobj, dobj, pinf, dinf)
