"""Leading nonlinearities of the form A(x, xi) = A0(x, |xi|) xi.

Each :class:`OperatorFamily` provides the radial coefficient ``A0``, its
primitive ``G0(t) = int_0^t A0(s) s ds`` and the Jacobian of ``A`` in ``xi``.
Near ``xi = 0`` the magnitude is regularized as ``sqrt(|xi|^2 + delta^2)`` so
that Newton linearizations stay finite for degenerate or singular exponents.
"""
from __future__ import annotations

from dataclasses import dataclass, field
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
    "DomainError",
    "OperatorFamily",
    "ThetaProfile",
    "StructureSamples",
    "p_laplacian",
    "pq_laplacian",
    "mean_curvature",
    "custom",
    "eval_A",
    "eval_G",
    "eval_jacobian",
    "check_structure_HA",
    "check_theta_profile",
]

KINDS = ("p_laplacian", "pq_laplacian", "mean_curvature", "custom")
KIND_CODES = {"p_laplacian": 0, "pq_laplacian": 1, "mean_curvature": 2}


class DomainError(ArithmeticError):
    """Evaluation at a point where the operator is not differentiable."""


@dataclass(frozen=True)
class OperatorFamily:
    """A radial operator family; build instances with the module constructors.

    For ``custom`` the callables take ``(x, t)`` with ``x`` of shape (k, 2)
    and ``t`` of shape (k,) and must be vectorized.
    """

    kind: str
    p: float
    q: float | None = None
    mu: float | None = None
    delta: float = 1e-10
    a0: Callable | None = field(default=None, compare=False, repr=False)
    a0_t: Callable | None = field(default=None, compare=False, repr=False)
    g0: Callable | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if not (np.isfinite(self.p) and self.p > 1):
            raise ValueError("p must lie in (1, inf)")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError("delta must be a finite nonnegative number")
        if self.kind == "pq_laplacian":
            if self.q is None or self.mu is None:
                raise ValueError("pq_laplacian needs q and mu")
            if not (1 < self.q < self.p):
                raise ValueError("pq_laplacian needs 1 < q < p")
            if not self.mu > 0:
                raise ValueError("pq_laplacian needs mu > 0")
        if self.kind == "custom" and (self.a0 is None or self.a0_t is None or self.g0 is None):
            raise ValueError("custom family needs a0, a0_t and g0 callables")

    @property
    def code(self):
        return KIND_CODES.get(self.kind, -1)

    def params(self):
        d = {"kind": self.kind, "p": self.p, "delta": self.delta}
        if self.kind == "pq_laplacian":
            d.update(q=self.q, mu=self.mu)
        return d

    # -- radial pieces, vectorized over t > 0 ---------------------------------
    def coefficient(self, x, t):
        """A0(x, t)."""
        p = self.p
        if self.kind == "p_laplacian":
            return t ** (p - 2)
        if self.kind == "pq_laplacian":
            return t ** (p - 2) + self.mu * t ** (self.q - 2)
        if self.kind == "mean_curvature":
            return (1.0 + t * t) ** (0.5 * (p - 2))
        return np.asarray(self.a0(x, t), dtype=float)

    def coefficient_slope(self, x, t):
        """A0'(x, t) / t, the rank-one weight in the Jacobian."""
        p = self.p
        if self.kind == "p_laplacian":
            return (p - 2) * t ** (p - 4)
        if self.kind == "pq_laplacian":
            return (p - 2) * t ** (p - 4) + self.mu * (self.q - 2) * t ** (self.q - 4)
        if self.kind == "mean_curvature":
            return (p - 2) * (1.0 + t * t) ** (0.5 * (p - 4))
        return np.asarray(self.a0_t(x, t), dtype=float) / t

    def potential(self, x, t):
        """G0(x, t) = int_0^t A0(x, s) s ds."""
        p = self.p
        if self.kind == "p_laplacian":
            return t**p / p
        if self.kind == "pq_laplacian":
            return t**p / p + self.mu * t**self.q / self.q
        if self.kind == "mean_curvature":
            return ((1.0 + t * t) ** (0.5 * p) - 1.0) / p
        return np.asarray(self.g0(x, t), dtype=float)

    def regularized(self, t):
        return np.sqrt(t * t + self.delta * self.delta) if self.delta > 0 else t

    # -- batched evaluation ---------------------------------------------------
    def flux(self, x, xi):
        """A(x, xi) for xi of shape (k, 2)."""
        xi = np.asarray(xi, dtype=float)
        t = self.regularized(np.hypot(xi[:, 0], xi[:, 1]))
        out = np.zeros_like(xi)
        nz = t > 0
        if nz.any():
            out[nz] = self.coefficient(_take(x, nz), t[nz])[:, None] * xi[nz]
        return out

    def energy(self, x, xi):
        """G(x, xi) for xi of shape (k, 2); shifted so that G(x, 0) = 0."""
        xi = np.asarray(xi, dtype=float)
        t = self.regularized(np.hypot(xi[:, 0], xi[:, 1]))
        g = self.potential(x, t)
        if self.delta > 0:
            g = g - self.potential(x, np.full_like(t, self.delta))
        return np.where(t > 0, g, 0.0)

    def jacobian(self, x, xi):
        """(k, 2, 2) Jacobians of A in xi."""
        xi = np.asarray(xi, dtype=float)
        t = self.regularized(np.hypot(xi[:, 0], xi[:, 1]))
        J = np.zeros((len(xi), 2, 2))
        zero = t == 0
        if zero.any():
            J[zero] = self._jacobian_at_origin()
        nz = ~zero
        if nz.any():
            xs = _take(x, nz)
            a = self.coefficient(xs, t[nz])
            b = self.coefficient_slope(xs, t[nz])
            v = xi[nz]
            J[nz] = a[:, None, None] * np.eye(2) + b[:, None, None] * v[:, :, None] * v[:, None, :]
        return J

    def _jacobian_at_origin(self):
        # reached only with delta == 0
        p = self.p
        if self.kind == "mean_curvature":
            return np.eye(2)
        lowest = min(p, self.q) if self.kind == "pq_laplacian" else p
        if self.kind == "custom" or lowest < 2:
            raise DomainError(
                f"Jacobian of {self.kind} (p={p}) is singular at xi=0 without regularization"
            )
        scale = 0.0
        if p == 2:
            scale += 1.0
        if self.kind == "pq_laplacian" and self.q == 2:
            scale += self.mu
        return scale * np.eye(2)


def _take(x, mask):
    if x is None:
        return None
    x = np.asarray(x, dtype=float)
    return x if x.ndim == 1 else x[mask]


def p_laplacian(p, delta=1e-10):
    return OperatorFamily("p_laplacian", p, delta=delta)


def pq_laplacian(p, q, mu, delta=1e-10):
    return OperatorFamily("pq_laplacian", p, q=q, mu=mu, delta=delta)


def mean_curvature(p, delta=1e-10):
    return OperatorFamily("mean_curvature", p, delta=delta)


def custom(p, a0, a0_t, g0, delta=1e-10):
    return OperatorFamily("custom", p, delta=delta, a0=a0, a0_t=a0_t, g0=g0)


def _one(x, xi):
    xi = np.asarray(xi, dtype=float).reshape(1, 2)
    if not np.all(np.isfinite(xi)):
        raise ValueError(f"non-finite gradient {xi.ravel().tolist()}")
    x = None if x is None else np.asarray(x, dtype=float).reshape(1, 2)
    return x, xi


def eval_A(fam, x, xi):
    """A(x, xi) at a single point."""
    x, xi = _one(x, xi)
    return fam.flux(x, xi)[0]


def eval_G(fam, x, xi):
    x, xi = _one(x, xi)
    return float(fam.energy(x, xi)[0])


def eval_jacobian(fam, x, xi):
    x, xi = _one(x, xi)
    return fam.jacobian(x, xi)[0]


@dataclass(frozen=True)
class ThetaProfile:
    """Comparison function with constants claimed to satisfy
    ``a1 <= t theta'(t)/theta(t) <= a2`` and ``a3 t^(p-1) <= theta(t) <= a4 (1 + t^(p-1))``.
    """

    theta: Callable
    a1: float
    a2: float
    a3: float
    a4: float
    theta_prime: Callable | None = None

    def log_derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.theta_prime is not None:
            d = self.theta_prime(t)
        else:
            h = 1e-6 * t
            d = (self.theta(t + h) - self.theta(t - h)) / (2 * h)
        return t * d / self.theta(t)


def log_grid(lo=1e-3, hi=1e3, per_decade=10):
    n = int(round(per_decade * np.log10(hi / lo))) + 1
    return np.logspace(np.log10(lo), np.log10(hi), n)


def check_theta_profile(profile, p, t=None, tol=None):
    """Audit the two-sided growth conditions of a theta profile on a log grid.

    The default tolerance is 1e-12 with an analytic ``theta_prime`` and 1e-6
    when the log-derivative comes from finite differences.
    """
    if tol is None:
        tol = 1e-12 if profile.theta_prime is not None else 1e-6
    t = log_grid() if t is None else np.asarray(t, dtype=float)
    th = require_finite(profile.theta(t), "theta", {"t": t})
    ld = require_finite(profile.log_derivative(t), "t theta'/theta", {"t": t})

    def at(k):
        return {"t": float(t[k])}

    checks = [
        upper_bound_check("log_derivative_lower", np.full_like(t, profile.a1), ld, at, tol),
        upper_bound_check("log_derivative_upper", ld, np.full_like(t, profile.a2), at, tol),
        upper_bound_check("theta_lower", profile.a3 * t ** (p - 1), th, at, tol),
        upper_bound_check("theta_upper", th, profile.a4 * (1 + t ** (p - 1)), at, tol),
    ]
    if profile.a1 <= 0:
        checks.append(Check("a1_positive", FAIL, profile.a1, {"a1": profile.a1}))
    return AuditReport("theta_profile", checks)


@dataclass
class StructureSamples:
    """Sampling box for :func:`check_structure_HA`.

    Magnitudes are log-spaced on ``[t_min, t_max]``; each magnitude is
    combined with ``n_directions`` equally spaced unit vectors and every
    point of ``x``.
    """

    x: np.ndarray = field(default_factory=lambda: np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]))
    t_min: float = 1e-3
    t_max: float = 1e3
    per_decade: int = 10
    n_directions: int = 16
    n_pairs: int = 1000
    seed: int = 0
    a3: float | None = None
    a6: float | None = None
    a7: float | None = None

    def magnitudes(self):
        return log_grid(self.t_min, self.t_max, self.per_decade)

    def points(self):
        """Flattened (x, xi, t) sample arrays."""
        t = self.magnitudes()
        ang = 2 * np.pi * np.arange(self.n_directions) / self.n_directions
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        x = np.asarray(self.x, dtype=float).reshape(-1, 2)
        X = np.repeat(x, len(t) * len(dirs), axis=0)
        T = np.tile(np.repeat(t, len(dirs)), len(x))
        D = np.tile(dirs, (len(x) * len(t), 1))
        return X, D * T[:, None], T


def check_structure_HA(fam, samples=None, theta=None, tol=1e-9):
    """Sampled audit of the structure conditions on A and its potential G.

    Checks (structural conditions, then their consequences for A and G):

    * ``positivity``       A0(x, t) > 0
    * ``radial_increasing`` t A0(x, t) strictly increasing in t
    * ``origin_limit``      t A0'(x, t)/A0(x, t) > -1 at the smallest t
    * ``monotonicity``      (A(xi1) - A(xi2)).(xi1 - xi2) > 0 on random pairs
    * ``growth``            |A| <= a6 (1 + |xi|^(p-1))
    * ``coercivity``        A.xi >= a3/(p-1) |xi|^p
    * ``potential_lower``   G >= a3/(p(p-1)) |xi|^p
    * ``potential_upper``   G <= a7 (1 + |xi|^p)
    * ``convexity``         0 <= G <= A.xi

    Constants not supplied in `samples` are fitted as the extremal sampled
    ratios. A fitted bound whose quotient still drifts by more than
    ``TREND_SLOPE`` (log-log) across the outermost sampled decade is reported
    as FAIL: no finite constant covers the whole space.
    """
    s = samples or StructureSamples()
    p = fam.p
    X, XI, T = s.points()
    pts = {"x": X, "xi": XI}

    def witness(k):
        return {"x": X[k].tolist(), "xi": XI[k].tolist(), "abs_xi": float(T[k])}

    A = require_finite(fam.flux(X, XI), "A", pts)
    G = require_finite(fam.energy(X, XI), "G", pts)
    Tr = fam.regularized(T)
    A0 = require_finite(fam.coefficient(X, Tr), "A0", pts)
    Anorm = np.hypot(A[:, 0], A[:, 1])
    Adot = np.einsum("ij,ij->i", A, XI)
    checks = []

    k = int(np.argmin(A0))
    checks.append(Check("positivity", PASS if A0[k] > 0 else FAIL, float(A0[k]), None if A0[k] > 0 else witness(k)))

    checks.append(_radial_increasing(fam, s))
    checks.append(_origin_limit(fam, s))
    checks.append(_monotonicity(fam, s))

    # growth: |A| <= a6 (1 + t^(p-1))
    ratio = Anorm / (1 + T ** (p - 1))
    if s.a6 is None:
        a6 = float(ratio.max())
        checks.append(_fitted_upper("growth", a6, T, ratio, witness, {"a6": a6}))
    else:
        c = upper_bound_check("growth", Anorm, s.a6 * (1 + T ** (p - 1)), witness, tol)
        c.fitted = {"a6": s.a6}
        checks.append(c)

    # coercivity: A.xi >= a3/(p-1) t^p
    ratio = Adot / T**p
    if s.a3 is None:
        a3 = float((p - 1) * ratio.min())
        c = _fitted_lower("coercivity", a3, T, ratio, witness, {"a3": a3})
        checks.append(c)
    else:
        a3 = s.a3
        c = upper_bound_check("coercivity", a3 / (p - 1) * T**p, Adot, witness, tol)
        c.fitted = {"a3": a3}
        checks.append(c)

    if a3 > 0:
        c = upper_bound_check("potential_lower", a3 / (p * (p - 1)) * T**p, G, witness, tol)
        c.fitted = {"a3": a3}
    else:
        c = Check("potential_lower", FAIL, a3, witness(int(np.argmin(ratio))), {"a3": a3}, "no positive a3")
    checks.append(c)

    ratio = G / (1 + T**p)
    if s.a7 is None:
        a7 = float(ratio.max())
        checks.append(_fitted_upper("potential_upper", a7, T, ratio, witness, {"a7": a7}))
    else:
        c = upper_bound_check("potential_upper", G, s.a7 * (1 + T**p), witness, tol)
        c.fitted = {"a7": s.a7}
        checks.append(c)

    conv = upper_bound_check("convexity", G, Adot, witness, tol)
    if G.min() < -tol:
        conv = Check("convexity", FAIL, float(G.min()), witness(int(np.argmin(G))), note="G < 0")
    checks.append(conv)

    if theta is not None:
        checks.extend(_theta_conditions(fam, theta, X, XI, T, witness, tol))
    return AuditReport(f"H(A):{fam.kind}", checks)


def _fitted_upper(check_id, const, T, ratio, witness, fitted):
    if not (np.isfinite(const) and const > 0):
        k = int(np.argmax(ratio))
        return Check(check_id, FAIL, float(const), witness(k), fitted, "no finite positive constant")
    slope, k = end_slope(T, ratio, "top", "max")
    if slope > TREND_SLOPE:
        return Check(check_id, FAIL, -slope, witness(k), fitted, f"bound quotient grows like |xi|^{slope:.3g}")
    return Check(check_id, PASS, float(const), None, fitted)


def _fitted_lower(check_id, const, T, ratio, witness, fitted):
    if not const > 0:
        k = int(np.argmin(ratio))
        return Check(check_id, FAIL, float(const), witness(k), fitted, "no positive constant")
    for end in ("top", "bottom"):
        slope, k = end_slope(T, ratio, end, "min")
        decaying = slope < -TREND_SLOPE if end == "top" else slope > TREND_SLOPE
        if decaying:
            return Check(
                check_id, FAIL, -abs(slope), witness(k), fitted,
                f"bound quotient decays like |xi|^{-abs(slope):.3g} at the {end} of the box",
            )
    return Check(check_id, PASS, float(const), None, fitted)


def _radial_increasing(fam, s):
    t = fam.regularized(s.magnitudes())
    worst = (np.inf, None)
    for x in np.asarray(s.x, dtype=float).reshape(-1, 2):
        xs = np.repeat(x[None], len(t), axis=0)
        r = t * fam.coefficient(xs, t)
        d = np.diff(r) / np.maximum(np.abs(r[1:]), 1e-300)
        k = int(np.argmin(d))
        if d[k] < worst[0]:
            worst = (float(d[k]), {"x": x.tolist(), "t1": float(t[k]), "t2": float(t[k + 1])})
    ok = worst[0] > 0
    return Check("radial_increasing", PASS if ok else FAIL, worst[0], None if ok else worst[1])


def _origin_limit(fam, s):
    t = np.array([fam.regularized(s.t_min)])
    worst = (np.inf, None)
    for x in np.asarray(s.x, dtype=float).reshape(-1, 2):
        xs = x[None]
        val = float((t * t * fam.coefficient_slope(xs, t) / fam.coefficient(xs, t))[0])
        if val < worst[0]:
            worst = (val, {"x": x.tolist(), "t": float(t[0])})
    ok = worst[0] > -1
    return Check(
        "origin_limit", PASS if ok else FAIL, worst[0] + 1, None if ok else worst[1],
        note="checked at the smallest sampled magnitude only",
    )


def _monotonicity(fam, s):
    rng = np.random.default_rng(s.seed)
    n = s.n_pairs
    x = np.asarray(s.x, dtype=float).reshape(-1, 2)
    X = x[rng.integers(len(x), size=n)]
    lo, hi = np.log(s.t_min), np.log(s.t_max)

    def draw():
        t = np.exp(rng.uniform(lo, hi, n))
        a = rng.uniform(0, 2 * np.pi, n)
        return t[:, None] * np.column_stack([np.cos(a), np.sin(a)])

    xi1, xi2 = draw(), draw()
    A1 = require_finite(fam.flux(X, xi1), "A", {"x": X, "xi": xi1})
    A2 = require_finite(fam.flux(X, xi2), "A", {"x": X, "xi": xi2})
    dA, dxi = A1 - A2, xi1 - xi2
    inner = np.einsum("ij,ij->i", dA, dxi)
    cosine = inner / np.maximum(np.hypot(*dA.T) * np.hypot(*dxi.T), 1e-300)
    k = int(np.argmin(cosine))
    ok = bool(np.all(inner > 0))
    w = None if ok else {"x": X[k].tolist(), "xi1": xi1[k].tolist(), "xi2": xi2[k].tolist()}
    return Check("monotonicity", PASS if ok else FAIL, float(cosine[k]), w, note=f"{n} random pairs")


def _theta_conditions(fam, theta, X, XI, T, witness, tol):
    J = fam.jacobian(X, XI)
    bound = theta.theta(T) / T
    spec_norm = np.linalg.norm(J, ord=2, axis=(1, 2))
    ratio = spec_norm / bound
    a5 = float(ratio.max())
    c2 = _fitted_upper("jacobian_bound", a5, T, ratio, witness, {"a5": a5})
    sym = 0.5 * (J + np.transpose(J, (0, 2, 1)))
    lam_min = np.linalg.eigvalsh(sym)[:, 0]
    c3 = upper_bound_check("jacobian_ellipticity", bound, lam_min, witness, tol)
    return [c2, c3]
