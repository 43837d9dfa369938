import csv
import io
import json

import pytest
import yaml

from unbalbb84 import cli
from unbalbb84.cli import ConfigError, RunConfig, main, results_csv, run_scan

SMOKE = {"kappa": [1.0], "eta": [1.0, 0.5], "p_d": [0.0], "n_a": 1, "n_b": 1, "alpha_points": 20}


def write(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.mark.parametrize(
    "bad",
    [
        {"eta": []},
        {"n_a": 3, "n_b": 2},
        {"kappa": [0.0]},
        {"kappa": [1.2]},
        {"eta": [1.5]},
        {"p_d": [1.0]},
        {"colour": "red"},
        {"g_family": "other"},
        {"jobs": 0},
        {"alpha_min": 0.0},
        {"eta": ["abc"]},
    ],
)
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_mapping(bad)


def test_scalar_promoted_to_list():
    cfg = RunConfig.from_mapping({"kappa": 0.5, "eta": [1.0, 0.5]})
    assert cfg.kappa == (0.5,)
    assert len(cfg.points()) == 2


def test_defaults_follow_the_standard_setting():
    cfg = RunConfig()
    assert cfg.p_d == (8.5e-7,) and cfg.f_ec == 1.22 and (cfg.n_a, cfg.n_b) == (3, 4)


def test_bad_config_exit_code(tmp_path, capsys):
    assert main([str(write(tmp_path, {"eta": []}))]) == 2
    assert "config error" in capsys.readouterr().err
    assert main([str(tmp_path / "missing.yaml")]) == 2
    assert main([]) == 2


def test_smoke_run(tmp_path):
    out = tmp_path / "out"
    code = main([str(write(tmp_path, SMOKE)), "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((out / "results.csv").read_text())))
    assert len(rows) == 2
    assert all(float(r["rate_bits_per_cycle"]) > 0 and r["error"] == "" for r in rows)
    assert "rate_bits_per_cycle" in rows[0] and "delta_ec_bits" in rows[0]
    dat = (out / "rate_vs_eta_kappa=1.dat").read_text().splitlines()
    assert dat[0].startswith("#") and len(dat) == 3
    logs = [json.loads(line) for line in (out / "solve_logs.jsonl").read_text().splitlines()]
    assert [rec["point"] for rec in logs] == [0, 1]
    assert logs[0]["solves"][0]["events"][-1]["event"] == "bound"


def test_deterministic_and_parallel_identical(tmp_path):
    cfg = RunConfig.from_mapping(SMOKE)
    a = results_csv(run_scan(cfg))
    b = results_csv(run_scan(cfg))
    c = results_csv(run_scan(cfg, jobs=2))
    assert a == b == c


def test_failed_point_is_recorded(tmp_path, monkeypatch):
    real = cli.evaluate

    def flaky(cfg, grid=None):
        if cfg.eta == 0.5:
            raise RuntimeError("solver exploded")
        return real(cfg, grid)

    monkeypatch.setattr(cli, "evaluate", flaky)
    out = tmp_path / "out"
    assert main([str(write(tmp_path, SMOKE)), "--out", str(out)]) == 1
    rows = list(csv.DictReader(io.StringIO((out / "results.csv").read_text())))
    assert rows[0]["error"] == ""
    assert rows[1]["error"] == "RuntimeError: solver exploded"
    assert rows[1]["kappa"] == "1.0"


def test_verify_only(capsys, monkeypatch):
    assert main(["--verify-only"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    from unbalbb84 import verify

    monkeypatch.setitem(verify.PROPERTIES, "povm element count", lambda vs: (False, "forced"))
    assert main(["--verify-only"]) == 1
