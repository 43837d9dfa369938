"""Batch driver: read a flat YAML config, run the parameter scan, write results.

Example config::

    kappa: [0.3, 0.5, 1.0]
    eta: [1.0, 0.5]
    p_d: [8.5e-7]
    n_a: 2
    n_b: 2

Outputs in ``out_dir``: ``results.csv`` (one row per scan point), one
``rate_vs_eta_*.dat`` file per kappa and ``solve_logs.jsonl``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from itertools import product
from pathlib import Path

import numpy as np
import yaml

from .fock import DomainError
from .keyrate import G_FAMILIES, KeyRateReport, ProtocolConfig, default_grid, evaluate, pa_logs
from .optimize import FWConfig
from .verify import VerifySettings, run_verify

log = logging.getLogger("unbalbb84")

LIST_KEYS = ("kappa", "eta", "eta_det", "p_d")


class ConfigError(ValueError):
    """Invalid run configuration; raised before any solve starts."""


@dataclass(frozen=True)
class RunConfig:
    kappa: tuple[float, ...] = (1.0,)
    eta: tuple[float, ...] = (1.0,)
    eta_det: tuple[float, ...] = (1.0,)
    p_d: tuple[float, ...] = (8.5e-7,)
    trust_dark_counts: bool = True
    trust_efficiency: bool = False
    n_a: int = 3
    n_b: int = 4
    f_ec: float = 1.22
    g_family: str = "constraint"
    alpha_min: float = 0.01
    alpha_max: float = 2.0
    alpha_points: int = 60
    fw_gap_tol: float = 1e-6
    fw_max_iters: int = 300
    out_dir: str = "results"
    jobs: int = 1
    seed: int = 20240601

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping of keys to values")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(unknown)}")
        kw = {}
        for key, value in data.items():
            if key in LIST_KEYS:
                values = value if isinstance(value, list) else [value]
                if not values:
                    raise ConfigError(f"{key} list is empty")
                try:
                    kw[key] = tuple(float(v) for v in values)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{key}: {exc}") from None
            else:
                kw[key] = value
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        return cls.from_mapping(data)

    def validate(self) -> None:
        for key in LIST_KEYS:
            if not getattr(self, key):
                raise ConfigError(f"{key} list is empty")
        if any(not 0.0 < k <= 1.0 for k in self.kappa):
            raise ConfigError("kappa values must lie in (0, 1]")
        if not isinstance(self.n_a, int) or not isinstance(self.n_b, int):
            raise ConfigError("n_a and n_b must be integers")
        if self.n_a > self.n_b:
            raise ConfigError(f"n_a={self.n_a} exceeds n_b={self.n_b}")
        if self.g_family not in G_FAMILIES:
            raise ConfigError(f"g_family must be one of {G_FAMILIES}")
        if not 0.0 < self.alpha_min <= self.alpha_max or self.alpha_points < 1:
            raise ConfigError("alpha grid needs 0 < alpha_min <= alpha_max and alpha_points >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        try:
            self.points()
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def fw(self) -> FWConfig:
        return FWConfig(gap_tol=self.fw_gap_tol, max_iters=self.fw_max_iters)

    @property
    def grid(self):
        return default_grid(self.alpha_min, self.alpha_max, self.alpha_points)

    def points(self) -> list[ProtocolConfig]:
        return [
            ProtocolConfig(
                kappa=k,
                eta=e,
                eta_det=ed,
                p_d=pd,
                trust_dark_counts=bool(self.trust_dark_counts),
                trust_efficiency=bool(self.trust_efficiency),
                n_a=self.n_a,
                n_b=self.n_b,
                f_ec=self.f_ec,
                g_family=self.g_family,
                fw=self.fw,
            )
            for k, e, ed, pd in product(self.kappa, self.eta, self.eta_det, self.p_d)
        ]


@dataclass(frozen=True)
class PointResult:
    index: int
    config: ProtocolConfig
    report: KeyRateReport | None
    error: str
    logs: tuple[str, ...]

    def row(self) -> dict:
        if self.report is not None:
            out = self.report.row()
        else:
            out = self.config.echo()
            out["trust_dark_counts"] = int(out["trust_dark_counts"])
            out["trust_efficiency"] = int(out["trust_efficiency"])
        out["error"] = self.error
        return out


def solve_point(index: int, cfg: ProtocolConfig, grid) -> PointResult:
    try:
        report = evaluate(cfg, grid)
        return PointResult(index, cfg, report, "", tuple(pa_logs(cfg)))
    except Exception as exc:  # recorded in-row; the scan goes on
        return PointResult(index, cfg, None, f"{type(exc).__name__}: {exc}", ())


def _solve_star(args) -> PointResult:
    return solve_point(*args)


def run_scan(config: RunConfig, jobs: int | None = None) -> list[PointResult]:
    """Solve every point, in parallel when ``jobs`` > 1; results come back in point order."""
    points = config.points()
    grid = config.grid
    jobs = config.jobs if jobs is None else jobs
    tasks = [(i, p, grid) for i, p in enumerate(points)]
    if jobs <= 1:
        results = []
        for t in tasks:
            results.append(_solve_star(t))
            log.info("point %d/%d done", t[0] + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_star, tasks))
    return sorted(results, key=lambda r: r.index)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def results_csv(results: list[PointResult]) -> str:
    rows = [r.row() for r in results]
    cols: list[str] = []
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(row[c]) if c in row else "" for c in cols])
    return buf.getvalue()


def plot_files(results: list[PointResult], config: RunConfig) -> dict[str, str]:
    """Two-column (eta, rate) text per kappa, one file per other swept parameter combination."""
    multi = len(config.eta_det) > 1 or len(config.p_d) > 1
    groups: dict[str, list[tuple[float, float]]] = {}
    for r in results:
        c = r.config
        name = f"rate_vs_eta_kappa={c.kappa:g}"
        if multi:
            name += f"_eta_det={c.eta_det:g}_p_d={c.p_d:g}"
        rate = r.report.rate if r.report is not None else float("nan")
        groups.setdefault(name + ".dat", []).append((c.eta, rate))
    out = {}
    for name, pts in groups.items():
        body = "".join(f"{_fmt(e)} {_fmt(v)}\n" for e, v in sorted(pts))
        out[name] = "# eta rate_bits_per_cycle\n" + body
    return out


def write_outputs(results: list[PointResult], config: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.csv").write_text(results_csv(results), encoding="utf-8")
    for name, text in plot_files(results, config).items():
        (out_dir / name).write_text(text, encoding="utf-8")
    with open(out_dir / "solve_logs.jsonl", "w", encoding="utf-8") as fh:
        for r in results:
            rec = {"point": r.index, "config": r.config.echo(), "error": r.error, "solves": [json.loads(s) for s in r.logs]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unbalbb84", description="Certified key-rate scans for unbalanced phase-encoded BB84.")
    p.add_argument("config", nargs="?", help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--jobs", type=int, help="worker processes (overrides jobs)")
    p.add_argument("--verify-only", action="store_true", help="run the property suite and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = RunConfig.load(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.verify_only:
        results = run_verify(VerifySettings(seed=config.seed))
        for r in results:
            print(r.line())
        return 0 if all(r.passed for r in results) else 1
    if not args.config:
        print("a config file is required unless --verify-only is given", file=sys.stderr)
        return 2
    if args.jobs is not None and args.jobs < 1:
        print("config error: --jobs must be at least 1", file=sys.stderr)
        return 2
    results = run_scan(config, args.jobs)
    out_dir = Path(args.out or config.out_dir)
    write_outputs(results, config, out_dir)
    failed = [r for r in results if r.error]
    for r in results:
        if r.report is not None:
            print(r.report.to_text())
        else:
            print(f"point {r.index} failed: {r.error}")
    print(f"wrote {len(results)} rows to {out_dir / 'results.csv'}")
    return 1 if failed else 0
