"""Named reactions, initial fields and exact solutions for declarative configs.

Each reaction factory takes ``(params, ctx)`` where ``ctx`` holds the
operator family and the mesh bounding box, and returns a
:class:`~moserlab.hypotheses.ReactionTerm`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hypotheses import ReactionTerm

__all__ = ["Context", "REACTIONS", "FIELDS", "make_reaction", "make_field", "known_params"]


@dataclass(frozen=True)
class Context:
    operator: object
    bbox: tuple  # (xmin, ymin, xmax, ymax)


def _zeros_like(s):
    return np.zeros(np.shape(s))


def _signed_power(s, r):
    return np.abs(s) ** (r - 1) * np.sign(s)


def _coscos(X):
    return np.cos(math.pi * X[:, 0]) * np.cos(math.pi * X[:, 1])


def _outward_normals(X, bbox, tol=1e-9):
    """Outward unit normals for points on the sides of an axis-aligned rectangle."""
    x0, y0, x1, y1 = bbox
    n = np.zeros_like(X)
    n[np.abs(X[:, 0] - x0) <= tol, 0] = -1.0
    n[np.abs(X[:, 0] - x1) <= tol, 0] = 1.0
    n[np.abs(X[:, 1] - y0) <= tol, 1] = -1.0
    n[np.abs(X[:, 1] - y1) <= tol, 1] = 1.0
    return n


def _zero(params, ctx):
    return ReactionTerm(
        b=lambda X, s, xi: _zeros_like(s), c=lambda X, s: _zeros_like(s),
        db_ds=lambda X, s, xi: _zeros_like(s), dc_ds=lambda X, s: _zeros_like(s),
        name="zero", b_depends_on_xi=False,
    )


def _constant(params, ctx):
    b, c = float(params.get("b", 0.0)), float(params.get("c", 0.0))
    return ReactionTerm(
        b=lambda X, s, xi: np.full(np.shape(s), b), c=lambda X, s: np.full(np.shape(s), c),
        db_ds=lambda X, s, xi: _zeros_like(s), dc_ds=lambda X, s: _zeros_like(s),
        name="constant", b_depends_on_xi=False,
    )


def _power(params, ctx):
    # B = lam |s|^(r-2) s + f,  C = mu |s|^(t-2) s + g
    r, lam, f = float(params.get("r", 2.0)), float(params.get("lam", 1.0)), float(params.get("f", 0.0))
    t, mu, g = float(params.get("t", 2.0)), float(params.get("mu", 0.0)), float(params.get("g", 0.0))
    return ReactionTerm(
        b=lambda X, s, xi: lam * _signed_power(s, r) + f,
        c=lambda X, s: mu * _signed_power(s, t) + g,
        name="power", b_depends_on_xi=False,
    )


def _robin(params, ctx):
    # B = f,  C = -|s|^(p-2) s + g
    p = float(params.get("p", ctx.operator.p))
    f, g = float(params.get("f", 0.0)), float(params.get("g", 0.0))
    return ReactionTerm(
        b=lambda X, s, xi: np.full(np.shape(s), f),
        c=lambda X, s: -_signed_power(s, p) + g,
        db_ds=lambda X, s, xi: _zeros_like(s),
        name="robin", b_depends_on_xi=False,
    )


def _quadratic(params, ctx):
    # C = k s^2: superlinear boundary growth
    k = float(params.get("k", 1.0))
    return ReactionTerm(
        b=lambda X, s, xi: _zeros_like(s), c=lambda X, s: k * np.asarray(s) ** 2,
        db_ds=lambda X, s, xi: _zeros_like(s), dc_ds=lambda X, s: 2 * k * np.asarray(s),
        name="quadratic", b_depends_on_xi=False,
    )


def _manufactured_robin_laplace(params, ctx):
    # u = cos(pi x) cos(pi y): -lap u = 2 pi^2 u, du/dn = 0 on the unit square
    return ReactionTerm(
        b=lambda X, s, xi: 2 * math.pi**2 * _coscos(X),
        c=lambda X, s: -np.asarray(s) + _coscos(X),
        db_ds=lambda X, s, xi: _zeros_like(s),
        dc_ds=lambda X, s: -np.ones(np.shape(s)),
        name="manufactured_robin_laplace", b_depends_on_xi=False,
    )


def _manufactured_linear_plap(params, ctx):
    # u = x: div A(grad u) = 0, boundary data from A(e_1).nu and the Robin term
    fam = ctx.operator
    p = fam.p

    def flux_normal(X):
        A = fam.flux(X, np.tile([1.0, 0.0], (len(X), 1)))
        return np.einsum("kd,kd->k", A, _outward_normals(X, ctx.bbox))

    return ReactionTerm(
        b=lambda X, s, xi: _zeros_like(s),
        c=lambda X, s: -_signed_power(s, p) + _signed_power(X[:, 0], p) + flux_normal(X),
        db_ds=lambda X, s, xi: _zeros_like(s),
        name="manufactured_linear_plap", b_depends_on_xi=False,
    )


REACTIONS = {
    "zero": (_zero, ()),
    "constant": (_constant, ("b", "c")),
    "power": (_power, ("r", "lam", "f", "t", "mu", "g")),
    "robin": (_robin, ("p", "f", "g")),
    "quadratic": (_quadratic, ("k",)),
    "manufactured_robin_laplace": (_manufactured_robin_laplace, ()),
    "manufactured_linear_plap": (_manufactured_linear_plap, ()),
}


def known_params(name):
    return REACTIONS[name][1]


def make_reaction(name, params, ctx):
    if name not in REACTIONS:
        raise KeyError(name)
    return REACTIONS[name][0](params, ctx)


# nodal fields (also used as exact solutions)
FIELDS = {
    "zero": lambda x, y, c: 0.0 * x,
    "one": lambda x, y, c: 1.0 + 0.0 * x,
    "constant": lambda x, y, c: c + 0.0 * x,
    "x": lambda x, y, c: x,
    "y": lambda x, y, c: y,
    "xy": lambda x, y, c: x * y,
    "coscos": lambda x, y, c: np.cos(math.pi * x) * np.cos(math.pi * y),
}


def make_field(name, value=0.0):
    """Vectorized ``f(x, y)`` for a named field."""
    if name not in FIELDS:
        raise KeyError(name)
    f = FIELDS[name]
    return lambda x, y: f(np.asarray(x, dtype=float), np.asarray(y, dtype=float), float(value))
