import numpy as np

from richsgd.glm import GlmFamily, gradient
from richsgd.verification import (
    Criterion,
    TheoremCheck,
    check_first_order_operator,
    check_plugin_bound_shape,
    check_sample_conditional_bias_linear,
    measure_variance_inflation,
    run_all,
    sample_conditional_bias_closed_form,
    write_verdict,
)


def test_closed_form_trivial_cases():
    x, w = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -1.0])
    assert np.array_equal(sample_conditional_bias_closed_form(x, 0.7, w, np.zeros(3)), np.zeros(3))
    g = gradient(GlmFamily("linear"), [0.4], [1.5], 0.2)
    assert np.allclose(sample_conditional_bias_closed_form([1.5], 0.2, [0.4], [0.3]), -0.3 * g)


def test_verdict_follows_measured_values():
    ok = TheoremCheck("t", {}, (Criterion("a", 1e-12, "<", 1e-10), Criterion("b", 2.0, ">=", 1.8)))
    bad = TheoremCheck("t", {}, (Criterion("a", 1e-12, "<", 1e-10), Criterion("b", np.nan, "<", 1.0)))
    assert ok.verdict and not bad.verdict
    assert ok.to_dict()["verdict"] is True


def test_sample_conditional_bias_check():
    assert check_sample_conditional_bias_linear().verdict


def test_first_order_operator_check():
    check = check_first_order_operator()
    assert check.verdict, [c for c in check.criteria if not c.passed]


def test_plugin_bound_shape_check():
    check = check_plugin_bound_shape()
    assert check.verdict, [c for c in check.criteria if not c.passed]
    norms = check.measured["bias_norms"]
    assert norms[-1] > norms[0]


def test_variance_inflation_is_reported_for_each_order():
    check = measure_variance_inflation(reps=500)
    ratios = check.measured["variance_ratio"]
    assert set(ratios) == {"1", "2", "3"}
    assert check.verdict
    assert all(np.isfinite(r) for r in ratios.values())


def test_verdict_file(tmp_path):
    import json

    checks = run_all()
    write_verdict(checks, tmp_path / "v.json")
    data = json.loads((tmp_path / "v.json").read_text())
    assert data["all_passed"] and {c["name"] for c in data["checks"]} == {c.name for c in checks}
