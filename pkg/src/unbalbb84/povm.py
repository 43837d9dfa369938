"""Bob's threshold-detector measurement.

Per basis choice there are four effective detection bins: the outside slots
t1 and t3 and the two middle-slot detectors D2 and D5. Click patterns are
subsets of those bins. The four patterns without a middle click do not depend
on the basis and are merged across bases, which leaves 28 outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import _kernels
from ._kernels import BIT_D2, BIT_D5, BIT_T1, BIT_T3
from .fock import DomainError, FockBasis, Operator, sector_loss_adjoint
from .source import SignalSettings

BIN_NAMES = {BIT_T1: "t1", BIT_D2: "D2", BIT_D5: "D5", BIT_T3: "t3"}
MIDDLE = BIT_D2 | BIT_D5
OUTSIDE = BIT_T1 | BIT_T3
N_OUTCOMES = 28
POSITIVITY_TOL = 1e-10


@dataclass(frozen=True)
class ClickPattern:
    """A coarse-grained outcome: basis index (None when basis-independent) and click mask."""

    basis: int | None
    mask: int

    @property
    def clicks(self) -> frozenset[str]:
        return frozenset(name for bit, name in BIN_NAMES.items() if self.mask & bit)

    @property
    def has_middle(self) -> bool:
        return bool(self.mask & MIDDLE)

    @property
    def has_outside(self) -> bool:
        return bool(self.mask & OUTSIDE)

    @property
    def is_cross_click(self) -> bool:
        return self.has_middle and self.has_outside

    def __str__(self) -> str:
        order = ("t1", "D2", "D5", "t3")
        clicks = "+".join(c for c in order if c in self.clicks) or "none"
        basis = "*" if self.basis is None else str(self.basis)
        return f"{basis}:{clicks}"


def _build_labels() -> tuple[ClickPattern, ...]:
    labels = [ClickPattern(None, m) for m in (0, BIT_T1, BIT_T3, BIT_T1 | BIT_T3)]
    for b in (0, 1):
        labels += [ClickPattern(b, m) for m in range(16) if m & MIDDLE]
    return tuple(labels)


LABELS = _build_labels()
LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}


def label_for(basis: int, mask: int) -> int:
    """Outcome index of a per-basis click mask after merging."""
    if mask & MIDDLE:
        return LABEL_INDEX[ClickPattern(basis, mask)]
    return LABEL_INDEX[ClickPattern(None, mask)]


def bin_modes(xi: float, basis: int) -> np.ndarray:
    """Rows give b_i in terms of (a_1, a_2) for bins t1, D2, D5, t3."""
    if not 0.5 <= xi < 1.0:
        raise DomainError(f"xi must lie in [1/2, 1), got {xi}")
    ph = np.exp(0.5j * np.pi * basis)
    s, c = np.sqrt((1.0 - xi) / 2.0), np.sqrt(xi / 2.0)
    return np.array(
        [
            [np.sqrt(xi), 0.0],
            [s, -ph * c],
            [s, ph * c],
            [0.0, np.sqrt(1.0 - xi)],
        ],
        dtype=np.complex128,
    )


@dataclass(frozen=True)
class PovmSet:
    """28 outcome operators stored sector by sector.

    ``blocks[n]`` has shape (28, n+1, n+1) and holds every element's
    restriction to the n-photon sector.
    """

    blocks: tuple[np.ndarray, ...] = field(repr=False)
    xi: float
    basis_probs: tuple[float, float]
    p_d: float = 0.0
    eta_det: float = 1.0
    labels: tuple[ClickPattern, ...] = LABELS

    @property
    def cutoff(self) -> int:
        return len(self.blocks) - 1

    @property
    def basis(self) -> FockBasis:
        return FockBasis(self.cutoff)

    def __len__(self) -> int:
        return len(self.labels)

    def element(self, k: int) -> Operator:
        fb = self.basis
        m = np.zeros((fb.dim, fb.dim), dtype=np.complex128)
        for n, blk in enumerate(self.blocks):
            s = fb.sector_slice(n)
            m[s, s] = blk[k]
        return Operator(fb, m, block_diagonal=True)

    def sector_sum(self, indices: Iterable[int], n: int) -> np.ndarray:
        idx = list(indices)
        return self.blocks[n][idx].sum(axis=0) if idx else np.zeros((n + 1, n + 1), complex)

    def low_block(self, k: int, n_max: int) -> np.ndarray:
        """Element k restricted to sectors 0..n_max as a dense matrix."""
        dim = (n_max + 1) * (n_max + 2) // 2
        out = np.zeros((dim, dim), dtype=np.complex128)
        for n in range(n_max + 1):
            s0 = n * (n + 1) // 2
            out[s0 : s0 + n + 1, s0 : s0 + n + 1] = self.blocks[n][k]
        return out

    def truncate(self, cutoff: int) -> "PovmSet":
        if cutoff > self.cutoff:
            raise DomainError("cannot extend a POVM beyond its cutoff")
        return replace(self, blocks=self.blocks[: cutoff + 1])


def build_ideal_povm(settings: SignalSettings, cutoff: int) -> PovmSet:
    xi = settings.xi
    pb = settings.basis_probs
    blocks = []
    for n in range(cutoff + 1):
        sec = np.zeros((N_OUTCOMES, n + 1, n + 1), dtype=np.complex128)
        for b in (0, 1):
            raw = np.zeros((16, n + 1, n + 1), dtype=np.complex128)
            vconj = np.ascontiguousarray(bin_modes(xi, b).conj())
            _kernels.sector_pattern_blocks(vconj, n, raw)
            for mask in range(16):
                sec[label_for(b, mask)] += pb[b] * raw[mask]
        blocks.append(sec)
    return PovmSet(tuple(blocks), xi, tuple(pb))


def flip_probabilities(p_d: float) -> dict[int, float]:
    """Probability that an empty bin shows a dark click."""
    outside = 1.0 - (1.0 - p_d) ** 2
    return {BIT_T1: outside, BIT_D2: p_d, BIT_D5: p_d, BIT_T3: outside}


def _mask_transition(src: int, dst: int, q: dict[int, float]) -> float:
    if src & ~dst:
        return 0.0
    prob = 1.0
    for bit, qb in q.items():
        if src & bit:
            continue
        prob *= qb if dst & bit else 1.0 - qb
    return prob


def postprocess_matrix(p_d: float, basis_probs=(0.5, 0.5)) -> np.ndarray:
    """Column-stochastic map P[k, i] from ideal outcome i to observed outcome k."""
    if not 0.0 <= p_d < 1.0:
        raise DomainError(f"p_d must lie in [0, 1), got {p_d}")
    q = flip_probabilities(p_d)
    mat = np.zeros((N_OUTCOMES, N_OUTCOMES))
    for i, lab in enumerate(LABELS):
        bases = (0, 1) if lab.basis is None else (lab.basis,)
        for b in bases:
            w = basis_probs[b] if lab.basis is None else 1.0
            for dst in range(16):
                pr = _mask_transition(lab.mask, dst, q)
                if pr:
                    mat[label_for(b, dst), i] += w * pr
    return mat


def dark_count_postprocess(povm: PovmSet, p_d: float) -> PovmSet:
    mat = postprocess_matrix(p_d, povm.basis_probs)
    blocks = tuple(np.einsum("ki,iab->kab", mat, blk) for blk in povm.blocks)
    return replace(povm, blocks=blocks, p_d=p_d)


def trusted_efficiency_transform(povm: PovmSet, eta_det: float) -> PovmSet:
    if not 0.0 < eta_det <= 1.0:
        raise DomainError(f"detector efficiency must lie in (0, 1], got {eta_det}")
    if eta_det == 1.0:
        return povm
    per_elem = [
        sector_loss_adjoint([povm.blocks[n][k] for n in range(povm.cutoff + 1)], eta_det)
        for k in range(N_OUTCOMES)
    ]
    blocks = tuple(
        np.stack([per_elem[k][n] for k in range(N_OUTCOMES)]) for n in range(povm.cutoff + 1)
    )
    return replace(povm, blocks=blocks, eta_det=povm.eta_det * eta_det)


def measurement_povm(settings: SignalSettings, cutoff: int, p_d: float = 0.0, eta_det: float = 1.0) -> PovmSet:
    """Ideal POVM followed by detector efficiency and dark-count processing."""
    povm = build_ideal_povm(settings, cutoff)
    povm = trusted_efficiency_transform(povm, eta_det)
    if p_d:
        povm = dark_count_postprocess(povm, p_d)
    return povm


CROSS_CLICK = tuple(i for i, lab in enumerate(LABELS) if lab.is_cross_click)
OUTSIDE_ONLY = tuple(i for i, lab in enumerate(LABELS) if lab.has_outside and not lab.has_middle)
INSIDE_ONLY = tuple(i for i, lab in enumerate(LABELS) if lab.has_middle and not lab.has_outside)
NO_CLICK = (LABEL_INDEX[ClickPattern(None, 0)],)


def coarse_elements(povm: PovmSet) -> dict[str, Operator]:
    groups = {"out": OUTSIDE_ONLY, "in": INSIDE_ONLY, "noclick": NO_CLICK}
    fb = povm.basis
    ops = {}
    for name, idx in groups.items():
        m = np.zeros((fb.dim, fb.dim), dtype=np.complex128)
        for n in range(povm.cutoff + 1):
            s = fb.sector_slice(n)
            m[s, s] = povm.sector_sum(idx, n)
        ops[name] = Operator(fb, m, block_diagonal=True)
    cc = np.eye(fb.dim) - sum(op.matrix for op in ops.values())
    ops["cc"] = Operator(fb, cc, block_diagonal=True)
    return ops


def cross_click_diagonal(povm: PovmSet) -> list[np.ndarray]:
    """Per-sector diagonal of the cross-click element."""
    return [np.real(np.diagonal(povm.sector_sum(CROSS_CLICK, n))) for n in range(povm.cutoff + 1)]


def check_povm(povm: PovmSet, tol: float = POSITIVITY_TOL) -> dict[str, float]:
    """Worst-case deviations from completeness and positivity, and element count."""
    completeness = 0.0
    min_eig = np.inf
    hermiticity = 0.0
    for n, blk in enumerate(povm.blocks):
        completeness = max(completeness, float(np.max(np.abs(blk.sum(axis=0) - np.eye(n + 1)))))
        hermiticity = max(hermiticity, float(np.max(np.abs(blk - blk.conj().transpose(0, 2, 1)))))
        herm = 0.5 * (blk + blk.conj().transpose(0, 2, 1))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(herm).min()))
    return {
        "completeness": completeness,
        "min_eigenvalue": min_eig,
        "hermiticity": hermiticity,
        "count": len(povm.labels),
    }


def dump_povm(povm: PovmSet, path) -> None:
    """Plain-text dump: one header line per (element, sector), then row-major re/im pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# povm xi={povm.xi!r} p_d={povm.p_d!r} eta_det={povm.eta_det!r} cutoff={povm.cutoff}\n"
        )
        for k, lab in enumerate(povm.labels):
            for n, blk in enumerate(povm.blocks):
                fh.write(f"element {k} {lab} sector {n} dim {n + 1}\n")
                for row in blk[k]:
                    fh.write(" ".join(f"{z.real:.17e} {z.imag:.17e}" for z in row) + "\n")


def load_povm_dump(path) -> dict[tuple[int, int], np.ndarray]:
    """Read back a dump as {(element, sector): block}."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    i = 0
    while i < len(lines):
        head = lines[i].split()
        k, n, d = int(head[1]), int(head[4]), int(head[6])
        rows = []
        for r in range(d):
            vals = np.array(lines[i + 1 + r].split(), dtype=float)
            rows.append(vals[0::2] + 1j * vals[1::2])
        out[(k, n)] = np.array(rows)
        i += d + 1
    return out
