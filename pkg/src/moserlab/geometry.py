"""Triangulated 2D polygonal domains and the quadrature rules used on them.

A :class:`Mesh` stores node coordinates, counter-clockwise triangles and the
oriented boundary edges together with their outward unit normals. Boundary
edges are never read from input; they are derived from edge incidence counts
(an edge used by exactly one triangle lies on the boundary).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "MeshError",
    "Mesh",
    "QuadratureRule",
    "triangle_rule",
    "edge_rule",
    "structured_rectangle_mesh",
    "load_mesh",
    "read_mesh",
    "dump_mesh",
    "domain_measure",
    "boundary_measure",
]

_AREA_EPS = 1e-14


class MeshError(ValueError):
    """Malformed mesh input or violated mesh invariant."""

    def __init__(self, message, line=None, element=None):
        self.line = line
        self.element = element
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 triangulation.

    Attributes
    ----------
    nodes : (n, 2) float array
    triangles : (m, 3) int array, counter-clockwise
    boundary_edges : (b, 2) int array, oriented so the domain lies to the left
    normals : (b, 2) float array of outward unit normals
    edge_lengths : (b,) float array
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    edge_lengths: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, nodes, triangles, strict=False):
        """Build a mesh, repairing (or, if `strict`, rejecting) clockwise triangles."""
        nodes = np.asarray(nodes, dtype=float)
        tri = np.array(triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must be an (n, 2) array")
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise MeshError("triangles must be an (m, 3) array")
        if len(tri) == 0:
            raise MeshError("mesh has no triangles")
        if not np.all(np.isfinite(nodes)):
            raise MeshError("non-finite node coordinate")
        n = len(nodes)
        bad = np.flatnonzero((tri < 0).any(axis=1) | (tri >= n).any(axis=1))
        if bad.size:
            k = int(bad[0])
            raise MeshError(
                f"triangle {k} {tri[k].tolist()} references a node outside 0..{n - 1}",
                element=k,
            )
        area2 = _signed_area2(nodes, tri)
        scale = max(float(np.ptp(nodes, axis=0).max()), 1.0) ** 2
        degenerate = np.flatnonzero(np.abs(area2) <= _AREA_EPS * scale)
        if degenerate.size:
            k = int(degenerate[0])
            raise MeshError(f"triangle {k} {tri[k].tolist()} has zero area", element=k)
        cw = np.flatnonzero(area2 < 0)
        if cw.size:
            if strict:
                k = int(cw[0])
                raise MeshError(
                    f"triangle {k} {tri[k].tolist()} is clockwise (negative area)",
                    element=k,
                )
            tri[cw] = tri[cw][:, [0, 2, 1]]
        edges, normals, lengths = _boundary_edges(nodes, tri)
        return cls(
            _frozen(nodes, float),
            _frozen(tri, np.int64),
            _frozen(edges, np.int64),
            _frozen(normals, float),
            _frozen(lengths, float),
        )

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        return _frozen(0.5 * _signed_area2(self.nodes, self.triangles), float)

    @cached_property
    def basis_gradients(self):
        """(m, 3, 2) gradients of the three local P1 hat functions."""
        p = self.nodes[self.triangles]
        # grad(phi_i) = rot90(opposite edge) / (2 area)
        e0 = p[:, 2] - p[:, 1]
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        rot = np.stack([e0, e1, e2], axis=1)[..., ::-1] * np.array([-1.0, 1.0])
        g = rot / (2.0 * self.areas)[:, None, None]
        return _frozen(g, float)

    @cached_property
    def boundary_nodes(self):
        return _frozen(np.unique(self.boundary_edges), np.int64)

    @cached_property
    def lumped_mass(self):
        """Nodal-rule weights: each node receives a third of its adjacent area."""
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return _frozen(w, float)

    @cached_property
    def boundary_lumped_mass(self):
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.boundary_edges.ravel(), np.repeat(self.edge_lengths / 2.0, 2))
        return _frozen(w, float)

    @property
    def h(self):
        """Largest edge length over all triangles."""
        p = self.nodes[self.triangles]
        d = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
        return float(d.max())

    def check_invariants(self, tol=1e-12):
        """Raise :class:`MeshError` if any structural invariant fails."""
        if np.any(self.areas <= 0):
            k = int(np.flatnonzero(self.areas <= 0)[0])
            raise MeshError(f"triangle {k} has non-positive area", element=k)
        counts = _edge_counts(self.triangles)
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        if np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > tol):
            raise MeshError("boundary normal is not unit length")
        tangent = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        if np.any(np.abs(np.einsum("ij,ij->i", tangent, self.normals)) > tol * self.edge_lengths):
            raise MeshError("boundary normal is not orthogonal to its edge")

    def integrate(self, values_at_points, rule):
        """Sum an integrand sampled at `rule` points of every triangle."""
        return float(np.einsum("tq,q,t->", values_at_points, rule.weights, self.areas) / rule.measure)

    def triangle_points(self, rule):
        """(m, nq, 2) physical coordinates of a triangle rule's points."""
        return np.einsum("qk,tkd->tqd", rule.points, self.nodes[self.triangles])

    def edge_points(self, rule):
        """(b, nq, 2) physical coordinates of an edge rule's points."""
        a = self.nodes[self.boundary_edges[:, 0]]
        b = self.nodes[self.boundary_edges[:, 1]]
        t = rule.points[:, 0]
        return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


def _signed_area2(nodes, tri):
    p = nodes[tri]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]


def _edge_counts(tri):
    e = np.sort(tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def _boundary_edges(nodes, tri):
    directed = tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    owner = np.repeat(np.arange(len(tri)), 3)
    key = np.sort(directed, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        k = int(np.flatnonzero(counts > 2)[0])
        raise MeshError(f"edge {uniq[k].tolist()} is shared by more than two triangles")
    once = counts[inverse] == 1
    edges = directed[once]
    owners = owner[once]
    tangent = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    lengths = np.linalg.norm(tangent, axis=1)
    # CCW triangles: the domain lies left of each directed edge, so the outward
    # normal is the tangent rotated clockwise.
    normals = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1) / lengths[:, None]
    centroid = nodes[tri[owners]].mean(axis=1)
    midpoint = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
    assert np.all(np.einsum("ij,ij->i", midpoint - centroid, normals) > 0)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order], normals[order], lengths[order]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Reference-element quadrature.

    Triangle rules use barycentric points on the reference triangle of area
    1/2; edge rules use one parametric coordinate on [0, 1].
    """

    name: str
    points: np.ndarray
    weights: np.ndarray
    measure: float
    degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")


def _tri(name, points, rel_weights, degree):
    points = np.asarray(points, dtype=float)
    weights = 0.5 * np.asarray(rel_weights, dtype=float)
    return QuadratureRule(name, _frozen(points, float), _frozen(weights, float), 0.5, degree)


def _perm3(a, b):
    return [[a, b, b], [b, a, b], [b, b, a]]


_A5, _B5 = 0.059715871789770, 0.470142064105115
_C5, _D5 = 0.797426985353087, 0.101286507323456

_TRIANGLE_RULES = {
    "nodal": _tri("nodal", np.eye(3), [1 / 3] * 3, 1),
    "degree2": _tri("degree2", _perm3(2 / 3, 1 / 6), [1 / 3] * 3, 2),
    "degree5": _tri(
        "degree5",
        [[1 / 3, 1 / 3, 1 / 3]] + _perm3(_A5, _B5) + _perm3(_C5, _D5),
        [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3,
        5,
    ),
}

_g = 0.5 / np.sqrt(3.0)
_h = 0.5 * np.sqrt(0.6)
_EDGE_RULES = {
    "nodal": QuadratureRule("nodal", _frozen([[0.0], [1.0]], float), _frozen([0.5, 0.5], float), 1.0, 1),
    "gauss2": QuadratureRule(
        "gauss2", _frozen([[0.5 - _g], [0.5 + _g]], float), _frozen([0.5, 0.5], float), 1.0, 3
    ),
    "gauss3": QuadratureRule(
        "gauss3",
        _frozen([[0.5 - _h], [0.5], [0.5 + _h]], float),
        _frozen([5 / 18, 8 / 18, 5 / 18], float),
        1.0,
        5,
    ),
}


def triangle_rule(name="degree2"):
    """Return a named triangle rule: ``nodal``, ``degree2`` (default) or ``degree5``."""
    try:
        return _TRIANGLE_RULES[name]
    except KeyError:
        raise ValueError(f"unknown triangle rule {name!r}") from None


def edge_rule(name="gauss2"):
    """Return a named edge rule: ``nodal``, ``gauss2`` (default) or ``gauss3``."""
    try:
        return _EDGE_RULES[name]
    except KeyError:
        raise ValueError(f"unknown edge rule {name!r}") from None


def structured_rectangle_mesh(width, height, nx, ny):
    """Split each cell of an nx-by-ny grid on [0,width]x[0,height] along its main diagonal."""
    if not (width > 0 and height > 0):
        raise ValueError("rectangle dimensions must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError("subdivision counts must be positive integers")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    n1, n2, n3 = n0 + 1, n0 + nx + 1, n0 + nx + 2
    tri = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([n0, n1, n3])
    tri[1::2] = np.column_stack([n0, n3, n2])
    return Mesh.from_arrays(nodes, tri, strict=True)


def load_mesh(text, strict=False):
    """Parse the plain-text mesh format.

    ``nodes N`` followed by N lines ``x y``, then ``elements M`` followed by
    M lines ``i j k`` (0-based). Blank lines and ``#`` comments are skipped.
    """
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body.split()))
    it = iter(lines)

    def header(keyword):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshError(f"missing '{keyword}' header") from None
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshError(f"expected '{keyword} <count>'", line=lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshError(f"bad count {tok[1]!r}", line=lineno) from None
        if count < 0:
            raise MeshError("negative count", line=lineno)
        return count

    def rows(count, width, conv, what):
        out = []
        for _ in range(count):
            try:
                lineno, tok = next(it)
            except StopIteration:
                raise MeshError(f"expected {count} {what} lines, file ended early") from None
            if len(tok) != width:
                raise MeshError(f"{what} line needs {width} values, got {len(tok)}", line=lineno)
            try:
                out.append([conv(t) for t in tok])
            except ValueError:
                raise MeshError(f"cannot parse {what} line {' '.join(tok)!r}", line=lineno) from None
        return out

    nodes = rows(header("nodes"), 2, float, "node")
    elements = rows(header("elements"), 3, int, "element")
    extra = next(it, None)
    if extra is not None:
        raise MeshError("unexpected content after elements", line=extra[0])
    if not nodes:
        raise MeshError("mesh has no nodes")
    return Mesh.from_arrays(np.array(nodes, dtype=float), np.array(elements, dtype=np.int64).reshape(-1, 3), strict=strict)


def read_mesh(path, strict=False):
    return load_mesh(Path(path).read_text(encoding="utf-8"), strict=strict)


def dump_mesh(mesh):
    """Serialize a mesh to the text format accepted by :func:`load_mesh`."""
    out = [f"nodes {mesh.n_nodes}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    out.append(f"elements {mesh.n_triangles}")
    out += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    return "\n".join(out) + "\n"


def domain_measure(mesh):
    return float(mesh.areas.sum())


def boundary_measure(mesh):
    return float(mesh.edge_lengths.sum())
