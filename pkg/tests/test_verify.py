from unbalbb84.verify import PROPERTIES, VerifySettings, run_verify


def test_default_suite_passes():
    results = run_verify(VerifySettings())
    assert [r.name for r in results] == list(PROPERTIES)
    failed = [r.line() for r in results if not r.passed]
    assert not failed, failed


def test_corrupted_povm_fails_completeness():
    results = {r.name: r for r in run_verify(VerifySettings(corrupt_povm=True), names=["povm completeness", "povm positivity"])}
    assert not results["povm completeness"].passed
    assert results["povm completeness"].line().startswith("FAIL")


def test_high_dark_count_stress_grid():
    vs = VerifySettings(p_ds=(0.1,))
    names = ["dark-count post-processing formulas", "cross-click floors", "subspace weight bound soundness"]
    assert all(r.passed for r in run_verify(vs, names=names))


def test_crashing_property_is_a_result(monkeypatch):
    def boom(vs):
        raise RuntimeError("broken")

    monkeypatch.setitem(PROPERTIES, "povm element count", boom)
    (res,) = run_verify(names=["povm element count"])
    assert not res.passed and "RuntimeError" in res.detail
