import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _cases import affine_spec, coscos, linear_plap_spec, robin_laplace_spec
from moserlab import solver as solver_mod
from moserlab._kernels_py import flux_assembly as py_flux
from moserlab.geometry import structured_rectangle_mesh
from moserlab.hypotheses import Exponents, ReactionTerm
from moserlab.operators import custom, mean_curvature, p_laplacian, pq_laplacian
from moserlab.registry import Context, make_reaction
from moserlab.solver import (
    AssemblyError,
    DiscreteField,
    NonConvergence,
    ProblemSpec,
    SolverOptions,
    assemble_jacobian,
    assemble_residual,
    solve,
)


def _spec(fam, reaction="zero", params=None, n=6, **kw):
    mesh = structured_rectangle_mesh(1.0, 1.0, n, n)
    rx = make_reaction(reaction, params or {}, Context(fam, (0, 0, 1, 1)))
    # q = p is admissible for every p; the fixed q = 4 is not when p < 2
    q = max(fam.p, 4.0) if fam.p >= 2 else fam.p
    return ProblemSpec(mesh, fam, rx, Exponents(fam.p, 2, q, q), **kw)


def test_problem_spec_validation():
    mesh = structured_rectangle_mesh(1, 1, 2, 2)
    fam = p_laplacian(2.0)
    rx = make_reaction("zero", {}, Context(fam, (0, 0, 1, 1)))
    with pytest.raises(ValueError, match="differs"):
        ProblemSpec(mesh, fam, rx, Exponents(3.0, 2, 3.0, 3.0))
    with pytest.raises(ValueError, match="N=2"):
        ProblemSpec(mesh, fam, rx, Exponents(2.0, 3, 2.0, 2.0))


def test_discrete_field_validation():
    with pytest.raises(ValueError):
        DiscreteField([1.0, np.nan])
    mesh = structured_rectangle_mesh(1, 1, 2, 2)
    with pytest.raises(ValueError):
        DiscreteField(np.zeros(3)).check(mesh)
    f = DiscreteField.interpolate(mesh, lambda x, y: x + y)
    assert np.allclose(f.values, mesh.nodes.sum(axis=1))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_residual_vanishes_for_constants_with_zero_data():
    spec = _spec(p_laplacian(2.0))
    r = assemble_residual(spec, np.full(spec.mesh.n_nodes, 3.7))
    assert np.abs(r).max() == 0.0


def test_residual_of_unit_source():
    spec = _spec(p_laplacian(2.0), "constant", {"b": 1.0})
    r = assemble_residual(spec, np.zeros(spec.mesh.n_nodes))
    support = np.zeros(spec.mesh.n_nodes)
    np.add.at(support, spec.mesh.triangles.ravel(), np.repeat(spec.mesh.areas, 3))
    assert np.allclose(r, -support / 3, atol=1e-15)
    assert r.sum() == pytest.approx(-1.0, rel=1e-13)


def test_residual_consistency_at_interpolant():
    norms = []
    for n in (8, 16, 32):
        spec = robin_laplace_spec(n)
        u = DiscreteField.interpolate(spec.mesh, coscos)
        norms.append(np.linalg.norm(assemble_residual(spec, u)))
    # at least first order; superconvergent (second order) on this uniform mesh
    assert norms[0] / norms[1] >= 1.9 and norms[1] / norms[2] >= 1.9


def test_residual_reports_element_of_non_finite_integrand():
    mesh = structured_rectangle_mesh(1, 1, 3, 3)
    fam = p_laplacian(2.0)

    def b(X, s, xi):
        out = np.zeros(len(s))
        out[X[:, 0] > 0.9] = np.nan
        return out

    spec = ProblemSpec(mesh, fam, ReactionTerm(b=b, c=lambda X, s: 0 * s, b_depends_on_xi=False), Exponents(2, 2, 2, 2))
    with pytest.raises(AssemblyError) as exc:
        assemble_residual(spec, np.zeros(mesh.n_nodes))
    k = exc.value.element
    assert mesh.nodes[mesh.triangles[k]][:, 0].max() == pytest.approx(1.0)


FAMILIES = [p_laplacian(2.0), p_laplacian(4.0), p_laplacian(1.5, delta=1e-3), pq_laplacian(3.0, 2.0, 0.5),
            mean_curvature(3.0)]


@pytest.mark.parametrize("fam", FAMILIES, ids=str)
def test_jacobian_directional_derivative(fam):
    rng = np.random.default_rng(42)
    for _ in range(10):
        spec = _spec(fam, "power", {"r": 3.0, "lam": 0.5, "t": 2.0, "mu": -1.0}, n=5)
        u = rng.standard_normal(spec.mesh.n_nodes)
        w = rng.standard_normal(spec.mesh.n_nodes)
        eps = 1e-6
        fd = (assemble_residual(spec, u + eps * w) - assemble_residual(spec, u)) / eps
        Jw = assemble_jacobian(spec, u) @ w
        assert np.linalg.norm(fd - Jw) <= 1e-5 * np.linalg.norm(Jw)


def test_jacobian_with_gradient_dependent_reaction():
    fam = p_laplacian(3.0)
    mesh = structured_rectangle_mesh(1, 1, 5, 5)
    rx = ReactionTerm(b=lambda X, s, xi: np.sin(s) * xi[:, 0] + xi[:, 1] ** 2, c=lambda X, s: -s**3)
    spec = ProblemSpec(mesh, fam, rx, Exponents(3.0, 2, 4.0, 4.0))
    rng = np.random.default_rng(3)
    u, w = rng.standard_normal(mesh.n_nodes), rng.standard_normal(mesh.n_nodes)
    fd = (assemble_residual(spec, u + 1e-6 * w) - assemble_residual(spec, u - 1e-6 * w)) / 2e-6
    Jw = assemble_jacobian(spec, u) @ w
    assert np.linalg.norm(fd - Jw) <= 1e-6 * np.linalg.norm(Jw)


def test_linear_case_jacobian_is_constant():
    spec = robin_laplace_spec(6)
    rng = np.random.default_rng(0)
    J1 = assemble_jacobian(spec, rng.standard_normal(spec.mesh.n_nodes)).toarray()
    J2 = assemble_jacobian(spec, rng.standard_normal(spec.mesh.n_nodes)).toarray()
    assert np.allclose(J1, J2, atol=1e-12)
    # stiffness rows sum to zero; the boundary mass adds the edge lengths
    assert J1.sum() == pytest.approx(4.0, rel=1e-12)


def test_x_only_source_adds_nothing_to_jacobian():
    fam = p_laplacian(3.0)
    a = _spec(fam, "zero")
    b = _spec(fam, "constant", {"b": 5.0})
    u = np.random.default_rng(1).standard_normal(a.mesh.n_nodes)
    assert np.allclose(assemble_jacobian(a, u).toarray(), assemble_jacobian(b, u).toarray(), atol=1e-14)


@pytest.mark.parametrize("fam", FAMILIES, ids=str)
def test_jacobian_symmetric_for_variational_data(fam):
    spec = _spec(fam, "robin", {"f": 1.0, "g": 0.5})
    u = np.random.default_rng(5).standard_normal(spec.mesh.n_nodes)
    J = assemble_jacobian(spec, u).toarray()
    assert np.abs(J - J.T).max() <= 1e-9 * max(1.0, np.abs(J).max())


def test_custom_operator_matches_builtin():
    p = 3.0
    c = custom(p, a0=lambda x, t: t ** (p - 2), a0_t=lambda x, t: (p - 2) * t ** (p - 3), g0=lambda x, t: t**p / p)
    a = _spec(p_laplacian(p), "robin", {"g": 1.0})
    b = _spec(c, "robin", {"g": 1.0})
    u = np.random.default_rng(2).standard_normal(a.mesh.n_nodes)
    assert np.allclose(assemble_residual(a, u), assemble_residual(b, u), rtol=1e-12, atol=1e-13)
    assert np.allclose(assemble_jacobian(a, u).toarray(), assemble_jacobian(b, u).toarray(), rtol=1e-10, atol=1e-12)


def test_zero_data_gives_zero_solution():
    spec = _spec(p_laplacian(3.0), "robin")
    rep = solve(spec)
    assert rep.converged and np.all(rep.field.values == 0) and rep.iterations == 0


def test_converged_residual_rechecked_independently():
    spec = robin_laplace_spec(16)
    rep = solve(spec)
    tol = spec.options.rtol * rep.residual_history[0] + spec.options.atol
    assert np.linalg.norm(assemble_residual(spec, rep.field)) <= tol
    d = rep.to_dict()
    assert d["converged"] and len(d["field"]) == spec.mesh.n_nodes


def test_degenerate_start_switches_to_picard():
    spec = linear_plap_spec(8, p=4.0)
    rep = solve(spec)
    assert rep.strategy == "picard"
    assert np.abs(rep.field.values - spec.mesh.nodes[:, 0]).max() <= 1e-8


def test_nonzero_initial_guess_stays_on_newton():
    spec = linear_plap_spec(8, p=4.0)
    u0 = DiscreteField.interpolate(spec.mesh, lambda x, y: 0.5 + 0.5 * x)
    rep = solve(spec, u0)
    assert rep.strategy == "newton" and rep.newton_iterations <= 12


@settings(max_examples=8, deadline=None)
@given(a=st.floats(-1, 1), b=st.floats(0.2, 2), c=st.floats(-2, 2), p=st.sampled_from([2.0, 3.0]))
def test_affine_reproduction(a, b, c, p):
    spec = affine_spec(6, p_laplacian(p), a, b, c)
    u0 = DiscreteField.interpolate(spec.mesh, lambda x, y: a + b * x + c * y + 0.1 * np.sin(3 * x))
    rep = solve(spec, u0)
    exact = a + b * spec.mesh.nodes[:, 0] + c * spec.mesh.nodes[:, 1]
    assert np.abs(rep.field.values - exact).max() <= 1e-8


def test_pure_neumann_pins_mean():
    mesh = structured_rectangle_mesh(1, 1, 16, 16)
    fam = p_laplacian(2.0)
    rx = ReactionTerm(b=lambda X, s, xi: 2 * math.pi**2 * np.cos(math.pi * X[:, 0]) * np.cos(math.pi * X[:, 1]),
                      c=lambda X, s: 0 * s, b_depends_on_xi=False)
    spec = ProblemSpec(mesh, fam, rx, Exponents(2, 2, 4, 4))
    rep = solve(spec, np.full(mesh.n_nodes, 5.0))
    assert rep.converged
    assert abs(mesh.lumped_mass @ rep.field.values) <= 1e-10
    assert np.abs(rep.field.values - coscos(mesh.nodes[:, 0], mesh.nodes[:, 1])).max() < 0.05
    # the unpinnable constant mode of the residual is the discrete compatibility defect
    R = assemble_residual(spec, rep.field)
    w = mesh.lumped_mass
    assert np.linalg.norm(R - w * R.sum() / w.sum()) <= 1e-8


def test_nonconvergence_carries_best_iterate():
    spec = linear_plap_spec(6, p=4.0)
    spec = ProblemSpec(spec.mesh, spec.operator, spec.reaction, spec.exponents,
                       options=SolverOptions(max_newton=2, max_picard=1))
    with pytest.raises(NonConvergence) as exc:
        solve(spec)
    e = exc.value
    assert len(e.best) == spec.mesh.n_nodes
    assert len(e.history) >= 1 and e.iterations >= 1
    assert np.linalg.norm(assemble_residual(spec, e.best)) == pytest.approx(min(e.history))


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(rtol=0, atol=0)
    with pytest.raises(ValueError):
        SolverOptions(armijo_c=0.7)


def test_pure_python_kernels_give_same_solution(monkeypatch):
    spec = robin_laplace_spec(8)
    ref = solve(spec).field.values
    monkeypatch.setattr(solver_mod.kernels, "flux_assembly", py_flux)
    spec2 = robin_laplace_spec(8)
    assert np.allclose(solve(spec2).field.values, ref, atol=1e-12)
