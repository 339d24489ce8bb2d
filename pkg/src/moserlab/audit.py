"""Verdict records shared by the structure and growth audits.

A PASS is sampled evidence only; a FAIL always carries a witness point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PASS = "PASS"
FAIL = "FAIL"

# log-log slope of a bound quotient over the outermost sampled decade above
# which the quotient is treated as unbounded (hypothesis fails globally)
TREND_SLOPE = 0.25


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


@dataclass
class Check:
    id: str
    verdict: str
    margin: float
    witness: dict | None = None
    fitted: dict = field(default_factory=dict)
    note: str = ""

    @property
    def passed(self):
        return self.verdict == PASS

    def to_dict(self):
        return _plain(
            {
                "id": self.id,
                "verdict": self.verdict,
                "margin": float(self.margin),
                "witness": self.witness,
                "fitted": self.fitted,
                "note": self.note,
            }
        )


@dataclass
class AuditReport:
    subject: str
    checks: list[Check]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, check_id):
        for c in self.checks:
            if c.id == check_id:
                return c
        raise KeyError(check_id)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {
            "subject": self.subject,
            "verdict": PASS if self.passed else FAIL,
            "checks": [c.to_dict() for c in self.checks],
        }


class NonFiniteEvaluation(ArithmeticError):
    """An audited function returned NaN or inf at a sample point."""

    def __init__(self, what, point):
        self.point = point
        super().__init__(f"{what} is not finite at {point}")


def require_finite(values, what, points):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        k = np.flatnonzero(bad.reshape(len(values), -1).any(axis=1))[0]
        raise NonFiniteEvaluation(what, _plain({k2: v[k] for k2, v in points.items()}))
    return values


def upper_bound_check(check_id, lhs, rhs, witness_of, tol=1e-12):
    """Check lhs <= rhs pointwise; margin is the smallest relative slack."""
    scale = np.maximum(np.abs(rhs), np.abs(lhs))
    scale = np.where(scale > 0, scale, 1.0)
    slack = (rhs - lhs) / scale
    k = int(np.argmin(slack))
    ok = bool(slack[k] >= -tol)
    return Check(check_id, PASS if ok else FAIL, float(slack[k]), None if ok else witness_of(k))


def end_slope(t, ratio, end="top", worst="max"):
    """Log-log slope of the worst `ratio` against `t` across the outermost sampled decade.

    Returns ``(slope, index)`` where ``index`` points at the worst sample at
    the extreme magnitude. `worst` is ``"max"`` for upper bounds and ``"min"``
    for lower bounds.
    """
    t = np.asarray(t, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    pick = np.max if worst == "max" else np.min
    edge = t.max() if end == "top" else t.min()
    inner = edge / 10.0 if end == "top" else edge * 10.0
    # nearest sampled magnitude to one decade inside the edge
    inner = t[np.argmin(np.abs(np.log(t) - np.log(inner)))]
    at_edge = np.flatnonzero(t == edge)
    at_inner = np.flatnonzero(t == inner)
    k = at_edge[np.argmax(ratio[at_edge]) if worst == "max" else np.argmin(ratio[at_edge])]
    r_edge, r_inner = pick(ratio[at_edge]), pick(ratio[at_inner])
    if edge == inner or r_edge <= 0 or r_inner <= 0:
        return 0.0, int(k)
    return float((np.log(r_edge) - np.log(r_inner)) / (np.log(edge) - np.log(inner))), int(k)
