"""Critical Sobolev exponents and sampled audits of the growth conditions
(H1)-(H4) and of the boundary Hoelder condition on C.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .audit import (
    FAIL,
    PASS,
    TREND_SLOPE,
    AuditReport,
    Check,
    end_slope,
    require_finite,
    upper_bound_check,
)

__all__ = [
    "UNBOUNDED",
    "Exponents",
    "GrowthConstants",
    "ReactionTerm",
    "GrowthSamples",
    "critical_exponent_domain",
    "critical_exponent_boundary",
    "verify_growth",
    "verify_boundary_holder",
]

SAFETY = 1.01


class _Unbounded:
    """Sentinel for p >= N, where every finite exponent is admissible."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNBOUNDED"

    __str__ = __repr__


UNBOUNDED = _Unbounded()


def _check_pN(p, N):
    if not (np.isfinite(p) and p > 1):
        raise ValueError(f"p must lie in (1, inf), got {p}")
    if int(N) != N or N < 2:
        raise ValueError(f"N must be an integer >= 2, got {N}")


def critical_exponent_domain(p, N):
    """Np/(N-p) for p < N, otherwise UNBOUNDED."""
    _check_pN(p, N)
    return N * p / (N - p) if p < N else UNBOUNDED


def critical_exponent_boundary(p, N):
    """(N-1)p/(N-p) for p < N, otherwise UNBOUNDED."""
    _check_pN(p, N)
    return (N - 1) * p / (N - p) if p < N else UNBOUNDED


@dataclass(frozen=True)
class Exponents:
    """Growth exponents with ``p <= q1 <= p*`` and ``p <= q2 <= p_*``.

    When ``p >= N`` the critical exponents are unbounded and `q1`, `q2` may be
    any finite numbers ``>= p``; diagnostics that need a finite critical
    exponent then use `q1` (domain) and `q2` (boundary) in its place.
    """

    p: float
    N: int
    q1: float
    q2: float

    def __post_init__(self):
        _check_pN(self.p, self.N)
        for name, q, crit in (("q1", self.q1, self.p_star), ("q2", self.q2, self.p_sub_star)):
            if not np.isfinite(q):
                raise ValueError(f"{name} must be finite")
            if q < self.p:
                raise ValueError(f"{name}={q} violates p <= {name} (p={self.p})")
            if crit is not UNBOUNDED and q > crit * (1 + 1e-12):
                sym = "p*" if name == "q1" else "p_*"
                raise ValueError(f"{name}={q} violates {name} <= {sym}={crit:.12g}")

    @property
    def p_star(self):
        return critical_exponent_domain(self.p, self.N)

    @property
    def p_sub_star(self):
        return critical_exponent_boundary(self.p, self.N)

    @property
    def critical_domain(self):
        """True critical exponent if finite, otherwise the supplied q1."""
        return self.q1 if self.p_star is UNBOUNDED else self.p_star

    @property
    def critical_boundary(self):
        return self.q2 if self.p_sub_star is UNBOUNDED else self.p_sub_star


@dataclass
class GrowthConstants:
    """Constants of (H1)-(H4) and of the Hoelder condition; ``None`` means fit."""

    a1: float | None = None
    a2: float | None = None
    a3: float | None = None
    a4: float | None = None
    a5: float | None = None
    a6: float | None = None
    b1: float | None = None
    b2: float | None = None
    b3: float | None = None
    c1: float | None = None
    c2: float | None = None
    holder_L: float | None = None
    holder_alpha: float | None = None
    M0: float | None = None

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v is None:
                continue
            if not np.isfinite(v):
                raise ValueError(f"constant {k} must be finite")
            if k == "holder_L":
                if v < 0:
                    raise ValueError("holder_L must be nonnegative")
            elif k == "holder_alpha":
                if not 0 < v <= 1:
                    raise ValueError("holder_alpha must lie in (0, 1]")
            elif v <= 0:
                raise ValueError(f"constant {k} must be positive")

    def supplied(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class ReactionTerm:
    """Right-hand side B(x, s, xi) in the domain and boundary term C(x, s).

    Callables are vectorized: ``b(x, s, xi)`` with shapes (k, 2), (k,),
    (k, 2) and ``c(x, s)`` with shapes (k, 2), (k,). Optional analytic
    derivatives replace the finite differences used by the solver.
    """

    b: Callable
    c: Callable
    db_ds: Callable | None = None
    db_dxi: Callable | None = None
    dc_ds: Callable | None = None
    name: str = "custom"
    b_depends_on_xi: bool = True


@dataclass
class GrowthSamples:
    """Audit box: x samples, |s| and |xi| log grids (with both signs / several directions)."""

    x_domain: np.ndarray = field(default_factory=lambda: np.array([[0.25, 0.25], [0.5, 0.5], [0.75, 0.6]]))
    x_boundary: np.ndarray | None = None
    s_min: float = 1e-3
    s_max: float = 1e3
    xi_min: float = 1e-3
    xi_max: float = 1e3
    per_decade: int = 8
    n_directions: int = 8
    n_boundary: int = 64

    def boundary_points(self):
        if self.x_boundary is not None:
            return np.asarray(self.x_boundary, dtype=float).reshape(-1, 2)
        return unit_square_perimeter(self.n_boundary)

    def s_values(self):
        m = _log_grid(self.s_min, self.s_max, self.per_decade)
        return np.concatenate([-m[::-1], m])

    def xi_values(self):
        t = _log_grid(self.xi_min, self.xi_max, self.per_decade)
        ang = 2 * np.pi * np.arange(self.n_directions) / self.n_directions
        d = np.column_stack([np.cos(ang), np.sin(ang)])
        return (t[:, None, None] * d[None]).reshape(-1, 2)


def _log_grid(lo, hi, per_decade):
    n = int(round(per_decade * np.log10(hi / lo))) + 1
    return np.logspace(np.log10(lo), np.log10(hi), n)


def unit_square_perimeter(n):
    """`n` equally spaced points on the boundary of [0,1]^2."""
    u = 4.0 * np.arange(n) / n
    side = np.floor(u).astype(int)
    f = u - side
    xs = np.choose(side, [f, np.ones_like(f), 1 - f, np.zeros_like(f)])
    ys = np.choose(side, [np.zeros_like(f), f, np.ones_like(f), 1 - f])
    return np.column_stack([xs, ys])


def _grid3(x, s, xi):
    nx, ns, nxi = len(x), len(s), len(xi)
    X = np.repeat(x, ns * nxi, axis=0)
    S = np.tile(np.repeat(s, nxi), nx)
    XI = np.tile(xi, (nx * ns, 1))
    return X, S, XI


def _fit_upper(check_id, lhs, given, parts, names, drivers, witness, tol):
    """Check ``lhs <= sum(const_k * parts_k)``.

    Given constants are used as-is; missing ones share one fitted scale,
    the sampled supremum of the residual quotient times SAFETY.
    """
    rhs_given = sum(given[n] * parts[n] for n in names if given.get(n) is not None)
    missing = [n for n in names if given.get(n) is None]
    fitted = {n: given[n] for n in names if given.get(n) is not None}
    if not missing:
        c = upper_bound_check(check_id, lhs, rhs_given, witness, tol)
        c.fitted = fitted
        return c
    denom = sum(parts[n] for n in missing)
    ratio = (lhs - rhs_given) / denom
    scale = max(float(ratio.max()) * SAFETY, np.finfo(float).tiny)
    fitted.update({n: scale for n in missing})
    for label, t in drivers.items():
        slope, k = end_slope(t, lhs / (rhs_given + denom), "top", "max")
        if slope > TREND_SLOPE:
            return Check(
                check_id, FAIL, -slope, witness(k), fitted,
                f"bound quotient grows like |{label}|^{slope:.3g}; no finite constant",
            )
    return Check(check_id, PASS, float(1 - ratio.max() / scale), None, fitted, "constants fitted on the sample box")


def verify_growth(reaction, fam, exps, consts=None, samples=None, tol=1e-12):
    """Sampled audit of (H1)-(H4) for the operator `fam` and `reaction`.

    Constants missing from `consts` are fitted; see :func:`_fit_upper`. For
    (H2) the lower constant ``a4`` is fitted as the sampled infimum divided
    by SAFETY, with ``a5``, ``a6`` defaulting to 1.
    """
    if abs(fam.p - exps.p) > 1e-12:
        raise ValueError(f"operator p={fam.p} differs from exponent p={exps.p}")
    g = (consts or GrowthConstants()).supplied()
    smp = samples or GrowthSamples()
    p, q1, q2 = exps.p, exps.q1, exps.q2
    checks = []

    # (H1), (H2): the operator has no s-dependence; sample s only through the bound
    x = np.asarray(smp.x_domain, dtype=float).reshape(-1, 2)
    X, S, XI = _grid3(x, smp.s_values(), smp.xi_values())
    T = np.hypot(XI[:, 0], XI[:, 1])
    aS = np.abs(S)

    def wdom(k):
        return {"x": X[k].tolist(), "s": float(S[k]), "xi": XI[k].tolist()}

    A = require_finite(fam.flux(X, XI), "A", {"x": X, "s": S, "xi": XI})
    Anorm = np.hypot(A[:, 0], A[:, 1])
    parts = {"a1": T ** (p - 1), "a2": aS ** (q1 * (p - 1) / p), "a3": np.ones_like(T)}
    checks.append(_fit_upper("H1", Anorm, g, parts, ("a1", "a2", "a3"), {"xi": T}, wdom, tol))

    Adot = np.einsum("ij,ij->i", A, XI)
    a5, a6 = g.get("a5", 1.0), g.get("a6", 1.0)
    slack = Adot + a5 * aS**q1 + a6
    if "a4" in g:
        c = upper_bound_check("H2", g["a4"] * T**p, slack, wdom, tol)
        c.fitted = {"a4": g["a4"], "a5": a5, "a6": a6}
    else:
        ratio = slack / T**p
        a4 = float(ratio.min()) / SAFETY
        fitted = {"a4": a4, "a5": a5, "a6": a6}
        slope, k = end_slope(T, ratio, "top", "min")
        if not a4 > 0:
            c = Check("H2", FAIL, a4, wdom(int(np.argmin(ratio))), fitted, "no positive a4")
        elif slope < -TREND_SLOPE:
            c = Check("H2", FAIL, slope, wdom(k), fitted, f"coercivity quotient decays like |xi|^{slope:.3g}")
        else:
            c = Check("H2", PASS, float(1 - a4 / ratio.min()), None, fitted, "a4 fitted on the sample box")
    checks.append(c)

    # (H3)
    B = require_finite(reaction.b(X, S, XI), "B", {"x": X, "s": S, "xi": XI})
    parts = {"b1": T ** (p * (q1 - 1) / q1), "b2": aS ** (q1 - 1), "b3": np.ones_like(T)}
    checks.append(_fit_upper("H3", np.abs(B), g, parts, ("b1", "b2", "b3"), {"s": aS, "xi": T}, wdom, tol))

    # (H4)
    xb = smp.boundary_points()
    s = smp.s_values()
    XB = np.repeat(xb, len(s), axis=0)
    SB = np.tile(s, len(xb))

    def wbnd(k):
        return {"x": XB[k].tolist(), "s": float(SB[k])}

    C = require_finite(reaction.c(XB, SB), "C", {"x": XB, "s": SB})
    parts = {"c1": np.abs(SB) ** (q2 - 1), "c2": np.ones_like(SB)}
    checks.append(_fit_upper("H4", np.abs(C), g, parts, ("c1", "c2"), {"s": np.abs(SB)}, wbnd, tol))
    return AuditReport(f"H:{reaction.name}", checks)


def verify_boundary_holder(c, consts, boundary_points=None, n_s=41, n_pairs=20000, seed=0, tol=1e-12):
    """Audit ``|C(x,s) - C(y,t)| <= L(|x-y|^alpha + |s-t|^alpha)`` and ``|C| <= L``
    on ``boundary x [-M0, M0]``.

    Pairs are all grid neighbours (in x and in s, where quotients are
    largest) plus `n_pairs` random pairs.
    """
    L, alpha, M0 = consts.holder_L, consts.holder_alpha, consts.M0
    if L is None or alpha is None or M0 is None:
        raise ValueError("holder_L, holder_alpha and M0 are required")
    xb = unit_square_perimeter(64) if boundary_points is None else np.asarray(boundary_points, dtype=float).reshape(-1, 2)
    s = np.linspace(-M0, M0, n_s)
    nb = len(xb)
    X = np.repeat(xb, n_s, axis=0)
    S = np.tile(s, nb)
    C = require_finite(c(X, S), "C", {"x": X, "s": S})

    idx = np.arange(nb * n_s).reshape(nb, n_s)
    pairs = [
        np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()]),
        np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()]),
        np.column_stack([np.repeat(idx[:, 0], n_s - 1), idx[:, 1:].ravel()]),
    ]
    rng = np.random.default_rng(seed)
    r = rng.integers(nb * n_s, size=(n_pairs, 2))
    pairs.append(r[r[:, 0] != r[:, 1]])
    P = np.concatenate(pairs)
    dx = np.hypot(*(X[P[:, 0]] - X[P[:, 1]]).T)
    ds = np.abs(S[P[:, 0]] - S[P[:, 1]])
    denom = dx**alpha + ds**alpha
    keep = denom > 0
    P, denom = P[keep], denom[keep]
    quotient = np.abs(C[P[:, 0]] - C[P[:, 1]]) / denom
    k = int(np.argmax(quotient))
    ok = quotient[k] <= L * (1 + tol) + tol
    w = None
    if not ok:
        i, j = P[k]
        w = {"x": X[i].tolist(), "s": float(S[i]), "y": X[j].tolist(), "t": float(S[j])}
    checks = [
        Check("holder_modulus", PASS if ok else FAIL, float(L - quotient[k]), w, {"worst_quotient": float(quotient[k])}),
    ]
    absC = np.abs(C)
    k = int(np.argmax(absC))
    ok = absC[k] <= L * (1 + tol) + tol
    checks.append(
        Check(
            "uniform_bound", PASS if ok else FAIL, float(L - absC[k]),
            None if ok else {"x": X[k].tolist(), "s": float(S[k])}, {"max_abs_C": float(absC[k])},
        )
    )
    return AuditReport("H(B,C):holder", checks)
