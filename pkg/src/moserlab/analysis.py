"""Norm engine and bootstrap diagnostics for P1 fields.

All L^q norms are accumulated in the log domain (``log sum w |u|^q``), so
exponents in the hundreds neither overflow nor underflow. Functions that
return a "log norm" give ``log ||u||``; exponentiate on demand.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import edge_rule, triangle_rule
from .hypotheses import UNBOUNDED, Exponents, critical_exponent_boundary, critical_exponent_domain

__all__ = [
    "NODAL_SWITCH",
    "lp_norm",
    "norm",
    "w1p_norm",
    "sup_norms",
    "error_norm",
    "region_measure",
    "tail_functionals",
    "ladder_part1",
    "ladder_part2",
    "norm_ladder",
    "NormLadderReport",
    "bernoulli_check",
    "trace_interpolation_fit",
    "TraceFitReport",
]

# above this exponent the Gauss rules are replaced by the nodal rule
NODAL_SWITCH = 20.0

_REGIONS = ("domain", "boundary")


def _nodal(mesh, field):
    v = np.asarray(getattr(field, "values", field), dtype=float)
    if v.shape != (mesh.n_nodes,):
        raise ValueError(f"field must have {mesh.n_nodes} nodal values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("field has non-finite entries")
    return v


def _check_region(region):
    if region not in _REGIONS:
        raise ValueError(f"region must be one of {_REGIONS}, got {region!r}")


def _samples(mesh, u, region, rule):
    """Values and weights of a quadrature rule applied to the P1 field `u`."""
    if rule == "nodal":
        w = mesh.lumped_mass if region == "domain" else mesh.boundary_lumped_mass
        keep = w > 0
        return u[keep], w[keep]
    if region == "domain":
        r = triangle_rule(rule)
        vals = u[mesh.triangles] @ r.points.T
        w = np.outer(mesh.areas, r.weights / r.measure)
    else:
        r = edge_rule(rule)
        t = r.points[:, 0]
        vals = u[mesh.boundary_edges] @ np.vstack([1 - t, t])
        w = np.outer(mesh.edge_lengths, r.weights / r.measure)
    return vals.ravel(), w.ravel()


def _default_rule(q, region):
    if q > NODAL_SWITCH:
        return "nodal"
    return "degree5" if region == "domain" else "gauss3"


def region_measure(mesh, region="domain"):
    _check_region(region)
    return float(mesh.areas.sum() if region == "domain" else mesh.edge_lengths.sum())


def _log_power_sum(vals, w, q):
    return kernels.log_power_sum(np.ascontiguousarray(vals, dtype=float), np.ascontiguousarray(w, dtype=float), float(q))


def lp_norm(mesh, field, q, region="domain", rule=None):
    """``log ||u||_{q}`` over the domain or the boundary.

    The default rule is degree-5 Gauss (gauss3 on edges) for q <= 20 and the
    nodal rule above. Returns ``-inf`` for the zero field.
    """
    q = float(q)
    if not (q >= 1 and math.isfinite(q)):
        raise ValueError(f"exponent must be finite and >= 1, got {q}")
    _check_region(region)
    u = _nodal(mesh, field)
    vals, w = _samples(mesh, u, region, rule or _default_rule(q, region))
    return _log_power_sum(vals, w, q) / q


def norm(mesh, field, q, region="domain", rule=None):
    """``||u||_q`` (exponentiated :func:`lp_norm`)."""
    return math.exp(lp_norm(mesh, field, q, region, rule))


def _log_gradient_power(mesh, u, p):
    g = np.einsum("ek,ekd->ed", u[mesh.triangles], mesh.basis_gradients)
    return _log_power_sum(np.hypot(g[:, 0], g[:, 1]), mesh.areas, p)


def w1p_norm(mesh, field, p, rule=None):
    """``(||grad u||_p^p + ||u||_p^p)^(1/p)``; gradients are elementwise constant."""
    p = float(p)
    if not (p >= 1 and math.isfinite(p)):
        raise ValueError(f"exponent must be finite and >= 1, got {p}")
    u = _nodal(mesh, field)
    lg = _log_gradient_power(mesh, u, p)
    lu = p * lp_norm(mesh, u, p, "domain", rule)
    return math.exp(np.logaddexp(lg, lu) / p)


def sup_norms(mesh, field):
    """Nodal maxima of ``|u|`` over all nodes and over boundary nodes."""
    u = np.abs(_nodal(mesh, field))
    return float(u.max()), float(u[mesh.boundary_nodes].max())


def error_norm(mesh, field, exact, q=2.0, rule="degree5"):
    """``||u_h - exact||_q`` on the domain, `exact` evaluated at quadrature points."""
    u = _nodal(mesh, field)
    r = triangle_rule(rule)
    pts = mesh.triangle_points(r)
    diff = (u[mesh.triangles] @ r.points.T) - np.asarray(exact(pts[..., 0], pts[..., 1]), dtype=float)
    w = np.outer(mesh.areas, r.weights / r.measure)
    return math.exp(_log_power_sum(diff.ravel(), w.ravel(), q) / q)


# ---------------------------------------------------------------- tails


def _finite_exponent(value, name):
    if value is UNBOUNDED:
        raise ValueError(f"{name} is unbounded for p >= N; supply a finite stand-in")
    return float(value)


def tail_functionals(mesh, field, p, N, L, G, p_star=None, p_boundary=None, rule=None):
    """Level-set tails ``H(L)`` (domain) and ``K(G)`` (boundary).

    ``H(L) = (int_{a > L} a^(p*/(p*-p)))^((p*-p)/p*)`` with ``a = |u|^(p*-p)``,
    and ``K`` likewise on the boundary with ``p_*``. `L` and `G` may be
    scalars or arrays (the result then has the same shapes). For ``p >= N``
    finite stand-ins `p_star` / `p_boundary` are required.
    """
    ps = _finite_exponent(p_star if p_star is not None else critical_exponent_domain(p, N), "p*")
    pb = _finite_exponent(p_boundary if p_boundary is not None else critical_exponent_boundary(p, N), "p_*")
    if not (ps > p and pb > p):
        raise ValueError("tail exponents need p* > p and p_* > p")
    u = _nodal(mesh, field)

    def tail(region, P, thresholds):
        th = np.asarray(thresholds, dtype=float)
        if np.any(th < 0) or not np.all(np.isfinite(th)):
            raise ValueError("thresholds must be finite and nonnegative")
        vals, w = _samples(mesh, u, region, rule or _default_rule(P, region))
        a = np.abs(vals) ** (P - p)
        out = np.empty(th.shape)
        for idx, level in np.ndenumerate(th):
            sel = a > level
            out[idx] = math.exp(_log_power_sum(vals[sel], w[sel], P) * (P - p) / P) if sel.any() else 0.0
        return out if out.ndim else float(out)

    return tail("domain", ps, L), tail("boundary", pb, G)


# ---------------------------------------------------------------- ladders


def ladder_part1(p, N, n_steps):
    """``kappa_1 .. kappa_n`` with ``(kappa_{n+1}+1) p = (kappa_n+1) p*`` and ``(kappa_1+1) p = p*``."""
    ps = critical_exponent_domain(p, N)
    if ps is UNBOUNDED:
        raise ValueError(f"ladder needs p < N (got p={p}, N={N})")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    r = ps / p
    out = [r - 1.0]
    for _ in range(int(n_steps) - 1):
        out.append((out[-1] + 1.0) * r - 1.0)
    return out


def ladder_part2(kappa0, p_star, q_tilde, n_steps, p=None):
    """``kappa_n + 1 = (kappa0 + 1)(p*/q~)^n`` for n = 1..n_steps.

    `q_tilde` must lie strictly below `p_star` (and above `p` when given).
    """
    if not kappa0 > 0:
        raise ValueError("kappa0 must be positive")
    lower = 1.0 if p is None else float(p)
    if not lower < q_tilde < p_star:
        raise ValueError(f"q_tilde={q_tilde} must lie in ({lower}, {p_star})")
    if int(n_steps) != n_steps or n_steps < 0:
        raise ValueError("n_steps must be a nonnegative integer")
    r = p_star / q_tilde
    return [(kappa0 + 1.0) * r**n - 1.0 for n in range(1, int(n_steps) + 1)]


def _anchored_kappa0(cap, base, ratio):
    """kappa0 placing the top rung exactly on `cap`; None if no rung fits."""
    x = math.log(cap / base) / math.log(ratio) if cap > base else 0.0
    n = math.ceil(x - 1e-12) - 1
    if n < 1:
        return None, 0
    return cap / (base * ratio**n) - 1.0, n


@dataclass
class NormLadderReport:
    kind: str
    kappa: list
    alpha: list
    log_norms: list
    sup_estimate: float | None
    direct_max: float
    relative_gap: float | None
    q_tilde: float
    kappa0: float
    alpha_cap: float
    exponent: float
    remark_norms: dict = field(default_factory=dict)

    @property
    def norms(self):
        return [math.exp(v) for v in self.log_norms]

    def to_dict(self):
        return {
            "kind": self.kind,
            "kappa": list(self.kappa),
            "alpha": list(self.alpha),
            "log_norms": list(self.log_norms),
            "norms": self.norms,
            "sup_estimate": self.sup_estimate,
            "direct_max": self.direct_max,
            "relative_gap": self.relative_gap,
            "q_tilde": self.q_tilde,
            "kappa0": self.kappa0,
            "alpha_cap": self.alpha_cap,
            "exponent": self.exponent,
            "remark_norms": dict(self.remark_norms),
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kappa", "alpha", "log_norm", "norm"])
        for k, a, ln in zip(self.kappa, self.alpha, self.log_norms):
            w.writerow([repr(k), repr(a), repr(ln), repr(math.exp(ln))])
        return buf.getvalue()


def norm_ladder(mesh, field, exps: Exponents, kind="domain", q_tilde=None, alpha_cap=400.0, kappa0=None, rule="nodal"):
    """Evaluate ``||u||_{alpha_n}`` along the geometric ladder up to `alpha_cap`.

    ``alpha_n = (kappa_n + 1) P`` with ``P = p*`` (domain) or ``p_*``
    (boundary); the kappa sequence comes from :func:`ladder_part2` with
    ratio ``p*/q_tilde``. Without an explicit `kappa0`, it is chosen so the
    top rung lands on `alpha_cap`. ``sup_estimate`` is the top-rung norm.
    When p >= N the finite stand-ins ``exps.q1`` / ``exps.q2`` play the
    roles of ``p*`` / ``p_*``.
    """
    _check_region(kind)
    u = _nodal(mesh, field)
    p = exps.p
    ps = float(exps.critical_domain)
    base = ps if kind == "domain" else float(exps.critical_boundary)
    if not ps > p:
        raise ValueError("the ladder needs p* > p (raise q1 when p >= N)")
    qt = 0.5 * (p + ps) if q_tilde is None else float(q_tilde)
    ratio = ps / qt
    if kappa0 is None:
        kappa0, n = _anchored_kappa0(alpha_cap, base, ratio) if qt < ps else (None, 0)
        if kappa0 is None:
            kappa0, n = ratio - 1.0 if ratio > 1 else 1.0, 0
    else:
        top = alpha_cap / (base * (kappa0 + 1.0))
        n = max(0, math.floor(math.log(top) / math.log(ratio) + 1e-12)) if top > 1 and ratio > 1 else 0
    kappa = ladder_part2(kappa0, ps, qt, n, p=p)
    alpha = [(k + 1.0) * base for k in kappa]
    # guard against the top rung overshooting the cap by rounding
    alpha = [min(a, alpha_cap) if abs(a - alpha_cap) <= 1e-12 * alpha_cap else a for a in alpha]
    logs = [lp_norm(mesh, u, a, kind, rule) for a in alpha]
    dmax, bmax = sup_norms(mesh, u)
    direct = dmax if kind == "domain" else bmax
    est = math.exp(logs[-1]) if logs else None
    gap = abs(est - direct) / direct if est is not None and direct > 0 else (0.0 if est is not None else None)
    remark = {}
    if qt > p:
        r_exp = (ps - p) * qt / (qt - p)
        if r_exp >= 1:
            remark[f"{r_exp:.12g}"] = math.exp(lp_norm(mesh, u, r_exp, "domain"))
    return NormLadderReport(kind, kappa, alpha, logs, est, direct, gap, qt, float(kappa0), float(alpha_cap), base, remark)


def bernoulli_check(kappa, p):
    """Truth of ``(kappa+1)^p >= kappa p + 1`` (kappa >= 0, p >= 1), in log form."""
    kappa, p = float(kappa), float(p)
    if kappa < 0 or p < 1:
        raise ValueError("requires kappa >= 0 and p >= 1")
    lhs = p * math.log1p(kappa)
    rhs = math.log1p(kappa * p)
    return lhs >= rhs - 4 * np.finfo(float).eps * max(1.0, abs(rhs))


# ---------------------------------------------------------------- trace fit


@dataclass
class TraceFitReport:
    p: float
    q_hat: float
    epsilons: list
    c_eps: list
    c1: float | None
    c2: float | None
    c1_regression: float | None
    residual: float | None
    holds: bool
    worst_ratio: float
    slack: float
    note: str = ""

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "p", "q_hat", "epsilons", "c_eps", "c1", "c2", "c1_regression",
            "residual", "holds", "worst_ratio", "slack", "note")}


def trace_interpolation_fit(mesh, p, q_hat, samples, epsilons, N=2, slack=0.01, rule=None):
    """Fit ``||u||_{q^,bdry}^p <= eps ||u||_{1,p}^p + c1 eps^(-c2) ||u||_p^p``.

    ``c(eps)`` is the largest defect quotient over `samples`; ``c2`` is the
    negated least-squares slope of ``log c`` against ``log eps`` over the
    eps with ``c > 0``, and ``c1`` is lifted to the smallest value making the
    bound hold on the whole grid (the regression intercept is also kept).
    """
    p, q_hat = float(p), float(q_hat)
    pb = critical_exponent_boundary(p, N)
    if not (p <= q_hat and (pb is UNBOUNDED or q_hat < pb)):
        raise ValueError(f"q_hat={q_hat} must lie in [p, p_*)")
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0):
        raise ValueError("epsilon grid must be a nonempty list of positive numbers")
    B, W, P = [], [], []
    for s in samples:
        u = _nodal(mesh, s)
        lp = lp_norm(mesh, u, p, "domain", rule)
        if lp == -math.inf:
            raise ValueError("sample fields must be nonzero")
        # normalize by ||u||_p^p up front: quotients are scale invariant
        B.append(math.exp(p * (lp_norm(mesh, u, q_hat, "boundary", rule) - lp)))
        W.append((w1p_norm(mesh, u, p, rule) / math.exp(lp)) ** p)
        P.append(1.0)
    B, W = np.array(B), np.array(W)
    c_eps = np.max(B[None, :] - eps[:, None] * W[None, :], axis=1)
    pos = c_eps > 0
    if not pos.any():
        return TraceFitReport(p, q_hat, eps.tolist(), c_eps.tolist(), None, None, None, None, True, 0.0, slack,
                              "inequality holds with c1 arbitrarily small on this family")
    le, lc = np.log(eps[pos]), np.log(c_eps[pos])
    if pos.sum() >= 2 and np.ptp(le) > 0:
        slope, intercept = np.polyfit(le, lc, 1)
        resid = float(np.sqrt(np.mean((lc - (slope * le + intercept)) ** 2)))
    else:
        slope, intercept, resid = 0.0, float(lc[0]), 0.0
    c2 = max(-float(slope), 0.0)
    c1 = float(np.max(c_eps[pos] * eps[pos] ** c2))
    rhs = eps[:, None] * W[None, :] + c1 * eps[:, None] ** (-c2)
    ratio = B[None, :] / rhs
    worst = float(ratio.max())
    return TraceFitReport(p, q_hat, eps.tolist(), c_eps.tolist(), c1, c2, float(math.exp(intercept)), resid,
                          bool(worst <= 1.0 + slack), worst, slack)
