"""P1 finite-element discretization of

    -div A(x, grad u) = B(x, u, grad u)   in the domain,
     A(x, grad u) . nu = C(x, u)          on the boundary,

and a damped Newton solver with a frozen-coefficient (Picard) fallback.

The residual vector has one entry per node,

    R_i(u) = int A(grad u).grad phi_i - int B phi_i - int_boundary C phi_i,

so ``R(u) = 0`` is the discrete weak formulation.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .geometry import Mesh, edge_rule, triangle_rule
from .hypotheses import Exponents, GrowthConstants, ReactionTerm
from .operators import OperatorFamily

__all__ = [
    "SolverOptions",
    "ProblemSpec",
    "DiscreteField",
    "SolveReport",
    "SolverError",
    "NonConvergence",
    "SingularLinearization",
    "AssemblyError",
    "assemble_residual",
    "assemble_jacobian",
    "solve",
]

log = logging.getLogger(__name__)


class AssemblyError(ArithmeticError):
    """Non-finite integrand; `element` is the triangle (or boundary edge) index."""

    def __init__(self, message, element=None, where="triangle"):
        self.element = element
        self.where = where
        super().__init__(f"{message} ({where} {element})")


class SolverError(RuntimeError):
    """Solver failure carrying the best iterate for post-mortem."""

    def __init__(self, message, best, history, iterations):
        super().__init__(message)
        self.best = best
        self.history = list(history)
        self.iterations = iterations


class NonConvergence(SolverError):
    pass


class SingularLinearization(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_newton: int = 50
    max_picard: int = 200
    armijo_c: float = 1e-4
    min_step: float = 1e-4
    picard_after: int = 3
    cg_rtol: float = 1e-13
    fd_step: float = 1e-6

    def __post_init__(self):
        if not (self.rtol >= 0 and self.atol >= 0 and self.rtol + self.atol > 0):
            raise ValueError("tolerances must be nonnegative and not both zero")
        if self.max_newton < 0 or self.max_picard < 0:
            raise ValueError("iteration caps must be nonnegative")
        if not 0 < self.armijo_c < 0.5:
            raise ValueError("armijo_c must lie in (0, 1/2)")


@dataclass(frozen=True)
class DiscreteField:
    """Nodal values of a continuous piecewise-affine function."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    @classmethod
    def zeros(cls, mesh):
        return cls(np.zeros(mesh.n_nodes))

    @classmethod
    def interpolate(cls, mesh, func):
        """Nodal interpolant of ``func(x, y)`` (vectorized)."""
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        return cls(np.broadcast_to(np.asarray(func(x, y), dtype=float), x.shape))

    def check(self, mesh):
        if len(self.values) != mesh.n_nodes:
            raise ValueError(f"field has {len(self.values)} values, mesh has {mesh.n_nodes} nodes")
        return self


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    mesh: Mesh
    operator: OperatorFamily
    reaction: ReactionTerm
    exponents: Exponents
    constants: GrowthConstants | None = None
    options: SolverOptions = field(default_factory=SolverOptions)
    triangle_rule: str = "degree2"
    edge_rule: str = "gauss2"

    def __post_init__(self):
        if abs(self.operator.p - self.exponents.p) > 1e-12:
            raise ValueError(f"operator p={self.operator.p} differs from exponents p={self.exponents.p}")
        if self.exponents.N != 2:
            raise ValueError("the mesh is two-dimensional; exponents must use N=2")
        self.mesh.check_invariants()

    @cached_property
    def _quad(self):
        return _Quadrature(self.mesh, triangle_rule(self.triangle_rule), edge_rule(self.edge_rule))


class _Quadrature:
    """Quadrature points, weights and basis values, precomputed once per spec."""

    def __init__(self, mesh, trule, erule):
        self.tri_phi = trule.points  # (nq, 3) barycentric = P1 basis values
        self.tri_w = trule.weights / trule.measure  # fractions of the element area
        self.tri_x = mesh.triangle_points(trule)  # (m, nq, 2)
        t = erule.points[:, 0]
        self.edge_phi = np.column_stack([1 - t, t])  # (ne, 2)
        self.edge_w = erule.weights / erule.measure
        self.edge_x = mesh.edge_points(erule)  # (b, ne, 2)


def _values(spec, u):
    if isinstance(u, DiscreteField):
        u.check(spec.mesh)
        return u.values
    v = np.asarray(u, dtype=float)
    if v.shape != (spec.mesh.n_nodes,):
        raise ValueError(f"field must have shape ({spec.mesh.n_nodes},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("field has non-finite entries")
    return v


def _gradients(mesh, u):
    return np.einsum("ek,ekd->ed", u[mesh.triangles], mesh.basis_gradients)


def _finite(vals, what, where="triangle"):
    bad = ~np.isfinite(vals)
    if bad.any():
        e = int(np.flatnonzero(bad.reshape(len(vals), -1).any(axis=1))[0])
        raise AssemblyError(f"non-finite {what}", e, where)
    return vals


def _flux_terms(spec, u, want_jac):
    mesh, fam = spec.mesh, spec.operator
    if fam.code >= 0:
        res, jac, n_zero = kernels.flux_assembly(
            fam.code, float(fam.p), float(fam.q or 0.0), float(fam.mu or 0.0), float(fam.delta),
            mesh.basis_gradients, mesh.areas, mesh.triangles, np.ascontiguousarray(u), want_jac,
        )
        if n_zero == 0:
            _finite(res, "flux")
            if jac is not None:
                _finite(jac, "flux Jacobian")
            return res, jac
    return _flux_terms_generic(spec, u, want_jac)


def _flux_terms_generic(spec, u, want_jac):
    # quadrature over x for x-dependent (custom) families; exact for constant A
    mesh, fam, q = spec.mesh, spec.operator, spec._quad
    m, nq = q.tri_x.shape[:2]
    g = _gradients(mesh, u)
    G = np.repeat(g, nq, axis=0)
    X = q.tri_x.reshape(-1, 2)
    flux = _finite(fam.flux(X, G).reshape(m, nq, 2), "flux")
    flux = np.einsum("eqd,q->ed", flux, q.tri_w) * mesh.areas[:, None]
    res = np.bincount(
        mesh.triangles.ravel(),
        weights=np.einsum("ed,ekd->ek", flux, mesh.basis_gradients).ravel(),
        minlength=mesh.n_nodes,
    )
    jac = None
    if want_jac:
        J = _finite(fam.jacobian(X, G).reshape(m, nq, 2, 2), "flux Jacobian")
        J = np.einsum("eqdf,q->edf", J, q.tri_w) * mesh.areas[:, None, None]
        grads = mesh.basis_gradients
        jac = np.einsum("eid,edf,ejf->eij", grads, J, grads)
    return res, jac


def _domain_samples(spec, u):
    mesh, q = spec.mesh, spec._quad
    m, nq = q.tri_x.shape[:2]
    X = q.tri_x.reshape(-1, 2)
    S = (u[mesh.triangles] @ q.tri_phi.T).ravel()
    XI = np.repeat(_gradients(mesh, u), nq, axis=0)
    return X, S, XI, m, nq


def _boundary_samples(spec, u):
    mesh, q = spec.mesh, spec._quad
    b, ne = q.edge_x.shape[:2]
    X = q.edge_x.reshape(-1, 2)
    S = (u[mesh.boundary_edges] @ q.edge_phi.T).ravel()
    return X, S, b, ne


def assemble_residual(spec, u):
    """Residual of the discrete weak form at the nodal field `u`."""
    u = _values(spec, u)
    mesh, q, rx = spec.mesh, spec._quad, spec.reaction
    res, _ = _flux_terms(spec, u, want_jac=False)

    X, S, XI, m, nq = _domain_samples(spec, u)
    B = _finite(np.asarray(rx.b(X, S, XI), dtype=float).reshape(m, nq), "reaction B")
    local = ((B * q.tri_w) @ q.tri_phi) * mesh.areas[:, None]
    res = res - np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)

    Xb, Sb, b, ne = _boundary_samples(spec, u)
    C = _finite(np.asarray(rx.c(Xb, Sb), dtype=float).reshape(b, ne), "boundary term C", "boundary edge")
    local = ((C * q.edge_w) @ q.edge_phi) * mesh.edge_lengths[:, None]
    res = res - np.bincount(mesh.boundary_edges.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)
    return res


def _central(f, x0, h):
    return (f(x0 + h) - f(x0 - h)) / (2 * h)


def _reaction_derivatives(spec, u):
    """dB/ds, dB/dxi at domain quadrature points and dC/ds at boundary points."""
    rx, step = spec.reaction, spec.options.fd_step
    X, S, XI, m, nq = _domain_samples(spec, u)
    if rx.db_ds is not None:
        dbds = np.asarray(rx.db_ds(X, S, XI), dtype=float)
    else:
        dbds = _central(lambda s: np.asarray(rx.b(X, s, XI), dtype=float), S, step * (1 + np.abs(S)))
    dbdxi = None
    if rx.db_dxi is not None:
        dbdxi = np.asarray(rx.db_dxi(X, S, XI), dtype=float)
    elif rx.b_depends_on_xi:
        dbdxi = np.empty_like(XI)
        for k in range(2):
            h = step * (1 + np.abs(XI[:, k]))
            e = np.zeros_like(XI)
            e[:, k] = h
            dbdxi[:, k] = (np.asarray(rx.b(X, S, XI + e)) - np.asarray(rx.b(X, S, XI - e))) / (2 * h)
    Xb, Sb, b, ne = _boundary_samples(spec, u)
    if rx.dc_ds is not None:
        dcds = np.asarray(rx.dc_ds(Xb, Sb), dtype=float)
    else:
        dcds = _central(lambda s: np.asarray(rx.c(Xb, s), dtype=float), Sb, step * (1 + np.abs(Sb)))
    dbds = _finite(dbds.reshape(m, nq), "dB/ds")
    if dbdxi is not None:
        dbdxi = _finite(dbdxi.reshape(m, nq, 2), "dB/dxi")
    dcds = _finite(dcds.reshape(b, ne), "dC/ds", "boundary edge")
    return dbds, dbdxi, dcds


def _lower_order_blocks(spec, u):
    """COO pieces of the Jacobian of the B and C terms."""
    mesh, q = spec.mesh, spec._quad
    dbds, dbdxi, dcds = _reaction_derivatives(spec, u)
    phi = q.tri_phi
    blocks = []
    # -int dB/ds phi_j phi_i
    loc = -np.einsum("eq,q,qi,qj->eij", dbds, q.tri_w, phi, phi) * mesh.areas[:, None, None]
    if dbdxi is not None:
        # -int (dB/dxi . grad phi_j) phi_i
        loc -= np.einsum("eqd,q,qi,ejd->eij", dbdxi, q.tri_w, phi, mesh.basis_gradients) * mesh.areas[:, None, None]
    blocks.append((mesh.triangles, loc))
    ephi = q.edge_phi
    loc = -np.einsum("eq,q,qi,qj->eij", dcds, q.edge_w, ephi, ephi) * mesh.edge_lengths[:, None, None]
    blocks.append((mesh.boundary_edges, loc))
    return blocks


def _coo(n, blocks):
    rows, cols, vals = [], [], []
    for conn, loc in blocks:
        k = conn.shape[1]
        rows.append(np.repeat(conn, k, axis=1).ravel())
        cols.append(np.tile(conn, (1, k)).ravel())
        vals.append(loc.ravel())
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return A.tocsr()


def assemble_jacobian(spec, u):
    """Sparse Jacobian dR/du (CSR)."""
    u = _values(spec, u)
    _, jac = _flux_terms(spec, u, want_jac=True)
    blocks = [(spec.mesh.triangles, jac)] + _lower_order_blocks(spec, u)
    return _coo(spec.mesh.n_nodes, blocks)


def _picard_matrix(spec, u):
    """Frozen-coefficient matrix: A0(|grad u_k|) stiffness plus the lower-order Jacobian."""
    mesh, fam = spec.mesh, spec.operator
    g = _gradients(mesh, u)
    t = fam.regularized(np.hypot(g[:, 0], g[:, 1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        a0 = fam.coefficient(mesh.triangle_points(triangle_rule("degree2")).mean(axis=1), t)
    a0 = np.where(t > 0, a0, 0.0)
    _finite(a0, "frozen coefficient")
    grads = mesh.basis_gradients
    loc = (a0 * mesh.areas)[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)
    return _coo(mesh.n_nodes, [(mesh.triangles, loc)] + _lower_order_blocks(spec, u))


def _reference_matrix(spec):
    """Laplace stiffness plus boundary mass: an SPD regularizer for degenerate steps."""
    mesh = spec.mesh
    grads = mesh.basis_gradients
    loc = mesh.areas[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)
    emass = mesh.edge_lengths[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)
    return _coo(mesh.n_nodes, [(mesh.triangles, loc), (mesh.boundary_edges, emass)])


def _backtrack(resfun, u, d, r, opt, keep_best=False):
    """Armijo backtracking on |R|^2 by halving. Returns (r, u, R) or None;
    with `keep_best` also the lowest-residual trial that beat `r`."""
    t, best = 1.0, None
    while t >= opt.min_step:
        un = u + t * d
        try:
            Rn = resfun(un)
        except AssemblyError:
            t *= 0.5
            continue
        rn = np.linalg.norm(Rn)
        if rn < r and (best is None or rn < best[0]):
            best = (rn, un, Rn)
        if rn * rn <= (1 - 2 * opt.armijo_c * t) * r * r:
            return ((rn, un, Rn), best) if keep_best else (rn, un, Rn)
        t *= 0.5
    return (None, best) if keep_best else None


def _needs_mean_pin(spec, u):
    """Pure Neumann degeneracy: C vanishes and B does not depend on s."""
    rx = spec.reaction
    Xb, Sb, _, _ = _boundary_samples(spec, u)
    for shift in (0.0, 1.0):
        if np.any(np.asarray(rx.c(Xb, Sb + shift)) != 0):
            return False
    X, S, XI, _, _ = _domain_samples(spec, u)
    b0 = np.asarray(rx.b(X, S, XI), dtype=float)
    return bool(np.all(np.asarray(rx.b(X, S + 1.0, XI), dtype=float) == b0))


def _linear_solve(J, rhs, cg_rtol, pin=None):
    """Solve J d = rhs by Jacobi-preconditioned CG; fall back to a direct, then a
    least-squares solve. With `pin` (nodal mass weights) the constant null
    vector is removed by a rank-one term and the step is made mean-free.
    """
    n = J.shape[0]
    rnorm = np.linalg.norm(rhs)
    if rnorm == 0:
        return np.zeros(n), "trivial"
    diag = J.diagonal()
    if pin is not None:
        w = pin / pin.sum()
        c = np.abs(diag).mean() / (w @ w)

        def mv(x):
            return J @ x + c * w * (w @ x)

        op = spla.LinearOperator((n, n), matvec=mv, dtype=float)
    else:
        op = J

        def mv(x):
            return J @ x

    def ok(x):
        return np.all(np.isfinite(x)) and np.linalg.norm(mv(x) - rhs) <= 1e-8 * rnorm

    if np.all(diag > 0):
        M = sp.diags(1.0 / diag)
        try:
            x, info = spla.cg(op, rhs, rtol=cg_rtol, atol=0.0, maxiter=10 * n, M=M)
        except (ValueError, ArithmeticError):
            info = -1
        if info == 0 and ok(x):
            return x, "cg"
        if ok(x):
            return x, "cg"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            if pin is not None:
                K = sp.bmat([[J, sp.csr_matrix(pin[:, None])], [sp.csr_matrix(pin[None, :]), None]], format="csc")
                x = spla.spsolve(K, np.append(rhs, 0.0))[:n]
            else:
                x = spla.spsolve(J.tocsc(), rhs)
        except (RuntimeError, ValueError):
            x = np.full(n, np.nan)
    if ok(x):
        return x, "direct"
    x = spla.lsqr(op, rhs, atol=1e-14, btol=1e-14, iter_lim=20 * n)[0]
    if np.all(np.isfinite(x)):
        return x, "lstsq"
    return None, "failed"


@dataclass
class SolveReport:
    field: DiscreteField
    residual_history: list
    iterations: int
    converged: bool
    strategy: str
    newton_iterations: int = 0
    picard_iterations: int = 0
    linear_solvers: list = field(default_factory=list)

    @property
    def residual(self):
        return self.residual_history[-1]

    def to_dict(self, include_field=True):
        d = {
            "converged": self.converged,
            "strategy": self.strategy,
            "iterations": self.iterations,
            "newton_iterations": self.newton_iterations,
            "picard_iterations": self.picard_iterations,
            "residual_history": [float(r) for r in self.residual_history],
            "final_residual": float(self.residual),
            "linear_solvers": sorted(set(self.linear_solvers)),
        }
        if include_field:
            d["field"] = self.field.values.tolist()
        return d


def solve(spec, initial=None):
    """Solve R(u) = 0 from `initial` (zero field by default).

    Damped Newton with Armijo backtracking on ``|R|^2`` (halving down to
    ``options.min_step``); after ``options.picard_after`` consecutive
    line-search failures the iteration switches to frozen-coefficient
    Picard steps. Converged means ``|R| <= rtol |R(initial)| + atol``.

    Raises :class:`NonConvergence` or :class:`SingularLinearization`, both
    carrying the best iterate.
    """
    opt = spec.options
    mesh = spec.mesh
    u = np.zeros(mesh.n_nodes) if initial is None else _values(spec, initial).copy()
    pin = mesh.lumped_mass if _needs_mean_pin(spec, u) else None
    if pin is not None:
        log.info("pure Neumann data: pinning the mean to zero")
        u = u - (pin @ u) / pin.sum()

    if pin is None:
        def resfun(v):
            return assemble_residual(spec, v)
    else:
        # the constant mode of the residual is fixed by the data (the
        # discrete compatibility defect) and cannot be driven to zero
        def resfun(v):
            Rv = assemble_residual(spec, v)
            return Rv - pin * (Rv.sum() / pin.sum())

    R = resfun(u)
    r = np.linalg.norm(R)
    tol = opt.rtol * r + opt.atol
    history = [r]
    best = (r, u.copy())
    solvers = []
    newton_its = picard_its = 0
    fails = 0

    def fail(cls, msg):
        raise cls(msg, DiscreteField(best[1]), history, newton_its + picard_its)

    def step_from(M, R):
        d, how = _linear_solve(M, -R, opt.cg_rtol, pin)
        if d is None:
            fail(SingularLinearization, "linear solve failed in every fallback")
        solvers.append(how)
        if pin is not None:
            d = d - (pin @ d) / pin.sum()
        return d

    strategy = "newton"
    while r > tol and newton_its < opt.max_newton and fails < opt.picard_after:
        newton_its += 1
        d = step_from(assemble_jacobian(spec, u), R)
        accepted, trial_best = _backtrack(resfun, u, d, r, opt, keep_best=True)
        if accepted is None:
            fails += 1
            log.debug("line search failed (%d in a row)", fails)
            if trial_best is None:
                continue
            accepted = trial_best
        else:
            fails = 0
        r, u, R = accepted
        history.append(r)
        if r < best[0]:
            best = (r, u.copy())

    if r > tol and fails >= opt.picard_after:
        strategy = "picard"
        log.info("switching to Picard iteration after %d failed line searches", fails)
        S = _reference_matrix(spec)
        scale = abs(S.diagonal()).mean()
        lam = 0.0
        while r > tol and picard_its < opt.max_picard:
            picard_its += 1
            P = _picard_matrix(spec, u)
            if lam > 0:
                P = P + lam * S
            d = step_from(P, R)
            accepted = _backtrack(resfun, u, d, r, opt)
            if accepted is None:
                # shorten the step through the regularization instead
                lam = max(10.0 * lam, 1e-6 * abs(P.diagonal()).mean() / scale, 1e-12)
                continue
            lam = 0.1 * lam if lam > 1e-12 else 0.0
            r, u, R = accepted
            if lam == 0.0 and r > tol:
                # once the frozen-coefficient step is undamped, try for quadratic convergence
                d, how = _linear_solve(assemble_jacobian(spec, u), -R, opt.cg_rtol, pin)
                if d is not None:
                    if pin is not None:
                        d = d - (pin @ d) / pin.sum()
                    trial = _backtrack(resfun, u, d, r, opt)
                    if trial is not None:
                        r, u, R = trial
            history.append(r)
            if r < best[0]:
                best = (r, u.copy())

    if r > tol:
        fail(NonConvergence, f"no convergence: residual {r:.3e} > tolerance {tol:.3e}")
    return SolveReport(DiscreteField(u), history, newton_its + picard_its, True, strategy, newton_its, picard_its, solvers)
