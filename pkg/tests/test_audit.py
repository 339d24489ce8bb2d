import json

import numpy as np
import pytest

from moserlab.audit import (
    FAIL,
    PASS,
    AuditReport,
    Check,
    NonFiniteEvaluation,
    end_slope,
    require_finite,
    upper_bound_check,
)


def test_upper_bound_check_reports_witness():
    lhs = np.array([1.0, 2.0, 5.0])
    rhs = np.array([2.0, 2.0, 4.0])
    c = upper_bound_check("demo", lhs, rhs, lambda k: {"k": k})
    assert c.verdict == FAIL and c.witness == {"k": 2}
    ok = upper_bound_check("demo", lhs, rhs + 2, lambda k: {"k": k})
    assert ok.verdict == PASS and ok.margin > 0


def test_require_finite_names_the_point():
    with pytest.raises(NonFiniteEvaluation) as exc:
        require_finite(np.array([1.0, np.inf]), "B", {"s": np.array([0.0, 3.0])})
    assert "3.0" in str(exc.value)


def test_end_slope_detects_growth():
    t = np.logspace(-3, 3, 61)
    slope, _ = end_slope(t, t**0.5, "top", "max")
    assert slope == pytest.approx(0.5, abs=1e-9)
    slope, _ = end_slope(t, np.ones_like(t), "top", "max")
    assert slope == pytest.approx(0.0, abs=1e-12)


def test_report_serialization_is_plain_json():
    rep = AuditReport("x", [Check("a", PASS, np.float64(0.5), None, {"c": np.float64(1.0)}),
                            Check("b", FAIL, -1.0, {"s": np.array([1.0, 2.0])})])
    d = rep.to_dict()
    assert d["verdict"] == FAIL
    json.dumps(d)
    assert [c.id for c in rep.failures()] == ["b"]
    with pytest.raises(KeyError):
        rep["zzz"]
