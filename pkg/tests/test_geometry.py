import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moserlab.geometry import (
    MeshError,
    Mesh,
    boundary_measure,
    domain_measure,
    dump_mesh,
    edge_rule,
    load_mesh,
    structured_rectangle_mesh,
    triangle_rule,
)


def _monomial_integral(a, b):
    # int over the reference triangle (0,0),(1,0),(0,1) of x^a y^b
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("name,degree", [("nodal", 1), ("degree2", 2), ("degree5", 5)])
def test_triangle_rule_exactness(name, degree):
    r = triangle_rule(name)
    assert r.weights.sum() == pytest.approx(0.5, abs=1e-14)
    # barycentric (l0, l1, l2) -> reference point (l1, l2)
    x, y = r.points[:, 1], r.points[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            assert (r.weights * x**a * y**b).sum() == pytest.approx(_monomial_integral(a, b), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("name,degree", [("nodal", 1), ("gauss2", 3), ("gauss3", 5)])
def test_edge_rule_exactness(name, degree):
    r = edge_rule(name)
    t = r.points[:, 0]
    for k in range(degree + 1):
        assert (r.weights * t**k).sum() == pytest.approx(1.0 / (k + 1), rel=1e-14)


def test_unknown_rules_rejected():
    with pytest.raises(ValueError):
        triangle_rule("degree9")
    with pytest.raises(ValueError):
        edge_rule("simpson")


def test_structured_mesh_counts_and_measures():
    m = structured_rectangle_mesh(2.0, 0.5, 8, 4)
    assert m.n_nodes == 9 * 5 and m.n_triangles == 2 * 8 * 4
    assert domain_measure(m) == pytest.approx(1.0, rel=1e-14)
    assert boundary_measure(m) == pytest.approx(5.0, rel=1e-14)
    assert len(m.boundary_edges) == 2 * (8 + 4)
    assert np.all(m.areas > 0)
    m.check_invariants()


def test_normals_unit_and_outward():
    m = structured_rectangle_mesh(1.0, 1.0, 6, 6)
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0, atol=1e-12)
    mid = 0.5 * (m.nodes[m.boundary_edges[:, 0]] + m.nodes[m.boundary_edges[:, 1]])
    # each boundary edge belongs to exactly one triangle; its centroid must lie inward
    tri_of_edge = {}
    for k, t in enumerate(m.triangles):
        for i in range(3):
            tri_of_edge[frozenset((t[i], t[(i + 1) % 3]))] = k
    for e, n, c in zip(m.boundary_edges, m.normals, mid):
        centroid = m.nodes[m.triangles[tri_of_edge[frozenset(e)]]].mean(axis=0)
        assert (c - centroid) @ n > 0


def test_basis_gradients_partition_of_unity():
    m = structured_rectangle_mesh(1.0, 1.0, 5, 3)
    assert np.allclose(m.basis_gradients.sum(axis=1), 0.0, atol=1e-12)
    # gradient of the interpolant of x is (1, 0) on every element
    g = np.einsum("ek,ekd->ed", m.nodes[m.triangles][..., 0], m.basis_gradients)
    assert np.allclose(g, [1.0, 0.0], atol=1e-12)


def test_lumped_masses_sum_to_measures():
    m = structured_rectangle_mesh(1.0, 3.0, 7, 5)
    assert m.lumped_mass.sum() == pytest.approx(3.0, rel=1e-13)
    assert m.boundary_lumped_mass.sum() == pytest.approx(8.0, rel=1e-13)
    assert np.all(m.boundary_lumped_mass[np.setdiff1d(np.arange(m.n_nodes), m.boundary_nodes)] == 0)


def test_clockwise_triangle_repaired_or_rejected():
    nodes = [[0, 0], [1, 0], [0, 1]]
    m = Mesh.from_arrays(nodes, [[0, 2, 1]])
    assert m.areas[0] == pytest.approx(0.5)
    with pytest.raises(MeshError) as exc:
        Mesh.from_arrays(nodes, [[0, 2, 1]], strict=True)
    assert exc.value.element == 0


def test_degenerate_and_out_of_range_triangles_rejected():
    with pytest.raises(MeshError, match="zero area") as exc:
        Mesh.from_arrays([[0, 0], [1, 0], [2, 0], [0, 1]], [[0, 1, 3], [0, 1, 2]])
    assert exc.value.element == 1
    with pytest.raises(MeshError, match="outside"):
        Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 3]])


def test_dump_load_roundtrip():
    m = structured_rectangle_mesh(1.5, 1.0, 3, 2)
    m2 = load_mesh(dump_mesh(m))
    assert np.array_equal(m.nodes, m2.nodes)
    assert np.array_equal(m.triangles, m2.triangles)
    assert np.array_equal(m.boundary_edges, m2.boundary_edges)


def test_loader_skips_comments_and_reports_lines():
    text = "# unit triangle\nnodes 3\n0 0\n1 0  # right\n\n0 1\nelements 1\n0 1 2\n"
    m = load_mesh(text)
    assert m.n_nodes == 3 and m.n_triangles == 1
    with pytest.raises(MeshError) as exc:
        load_mesh("nodes 3\n0 0\n1 zero\n0 1\nelements 1\n0 1 2\n")
    assert exc.value.line == 3
    with pytest.raises(MeshError, match="elements"):
        load_mesh("nodes 1\n0 0\n")
    with pytest.raises(MeshError) as exc:
        load_mesh("nodes 3\n0 0\n1 0\n0 1\nelements 1\n0 1 2\nextra\n")
    assert exc.value.line == 7


def test_nodal_rule_oracle_for_x_squared():
    # nodal rule applied to (I_h x)^2 on an n x n grid gives 1/3 + h^2/6 exactly
    for n in (4, 8, 16):
        m = structured_rectangle_mesh(1.0, 1.0, n, n)
        val = (m.lumped_mass * m.nodes[:, 0] ** 2).sum()
        assert val == pytest.approx(1 / 3 + 1 / (6 * n * n), rel=1e-13)


def test_integrate_matches_exact_polynomial():
    m = structured_rectangle_mesh(1.0, 1.0, 4, 4)
    r = triangle_rule("degree5")
    P = m.triangle_points(r)
    val = m.integrate(P[..., 0] ** 3 * P[..., 1] ** 2, r)
    assert val == pytest.approx(1 / 12, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(0.2, 3.0), b=st.floats(-1.0, 1.0), d=st.floats(0.2, 3.0),
    nx=st.integers(1, 6), ny=st.integers(1, 6),
)
def test_affine_image_scales_area(a, b, d, nx, ny):
    m = structured_rectangle_mesh(1.0, 1.0, nx, ny)
    T = np.array([[a, b], [0.0, d]])
    m2 = Mesh.from_arrays(m.nodes @ T.T, m.triangles, strict=True)
    assert domain_measure(m2) == pytest.approx(a * d, rel=1e-12)
    m2.check_invariants()
