"""Problem builders shared by the test modules."""
import math

import numpy as np

from moserlab.geometry import structured_rectangle_mesh
from moserlab.hypotheses import Exponents, ReactionTerm
from moserlab.operators import p_laplacian
from moserlab.registry import Context, make_reaction
from moserlab.solver import ProblemSpec, SolverOptions

PI = math.pi


def coscos(x, y):
    return np.cos(PI * x) * np.cos(PI * y)


def robin_laplace_spec(n, q1=4.0, q2=4.0):
    mesh = structured_rectangle_mesh(1.0, 1.0, n, n)
    fam = p_laplacian(2.0)
    rx = make_reaction("manufactured_robin_laplace", {}, Context(fam, (0.0, 0.0, 1.0, 1.0)))
    return ProblemSpec(mesh, fam, rx, Exponents(2.0, 2, q1, q2))


def linear_plap_spec(n, p=4.0, fam=None):
    mesh = structured_rectangle_mesh(1.0, 1.0, n, n)
    fam = fam or p_laplacian(p)
    rx = make_reaction("manufactured_linear_plap", {}, Context(fam, (0.0, 0.0, 1.0, 1.0)))
    return ProblemSpec(mesh, fam, rx, Exponents(fam.p, 2, max(fam.p, 4.0), max(fam.p, 4.0)))


def affine_spec(n, fam, a, b, c):
    """Exact solution u = a + b x + c y: B = 0 and C = -|s|^(p-2)s + |u|^(p-2)u + A(grad u).nu."""
    mesh = structured_rectangle_mesh(1.0, 1.0, n, n)
    p = fam.p
    g = np.array([b, c])

    def normals(X):
        nrm = np.zeros_like(X)
        nrm[np.isclose(X[:, 0], 0.0), 0] = -1
        nrm[np.isclose(X[:, 0], 1.0), 0] = 1
        nrm[np.isclose(X[:, 1], 0.0), 1] = -1
        nrm[np.isclose(X[:, 1], 1.0), 1] = 1
        return nrm

    def spow(s):
        return np.abs(s) ** (p - 1) * np.sign(s)

    def cfun(X, s):
        u = a + b * X[:, 0] + c * X[:, 1]
        A = fam.flux(X, np.tile(g, (len(X), 1)))
        return -spow(s) + spow(u) + np.einsum("kd,kd->k", A, normals(X))

    rx = ReactionTerm(b=lambda X, s, xi: np.zeros(len(s)), c=cfun, b_depends_on_xi=False)
    return ProblemSpec(mesh, fam, rx, Exponents(p, 2, max(p, 4.0), max(p, 4.0)), options=SolverOptions())
