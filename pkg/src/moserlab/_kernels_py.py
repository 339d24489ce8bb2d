"""NumPy implementations of the element kernels (used when the extension is absent)."""
import numpy as np


def _radial(code, p, q, mu, t):
    if code == 0:
        return t ** (p - 2), (p - 2) * t ** (p - 4)
    if code == 1:
        return (
            t ** (p - 2) + mu * t ** (q - 2),
            (p - 2) * t ** (p - 4) + mu * (q - 2) * t ** (q - 4),
        )
    s = 1.0 + t * t
    return s ** (0.5 * (p - 2)), (p - 2) * s ** (0.5 * (p - 4))


def flux_assembly(code, p, q, mu, delta, grads, areas, tri, u, want_jac):
    g = np.einsum("ek,ekd->ed", u[tri], grads)
    t = np.sqrt(g[:, 0] ** 2 + g[:, 1] ** 2 + delta * delta)
    zero = t == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        a, b = _radial(code, p, q, mu, t)
    a = np.where(zero, 0.0, a)
    b = np.where(zero, 0.0, b)
    flux = (a * areas)[:, None] * g
    res = np.bincount(tri.ravel(), weights=np.einsum("ed,ekd->ek", flux, grads).ravel(), minlength=len(u))
    jac = None
    if want_jac:
        J = a[:, None, None] * np.eye(2) + b[:, None, None] * g[:, :, None] * g[:, None, :]
        jac = areas[:, None, None] * np.einsum("eid,edf,ejf->eij", grads, J, grads)
    return res, jac, int(zero.sum())


def log_power_sum(values, weights, q):
    v = np.abs(np.asarray(values, dtype=float))
    w = np.asarray(weights, dtype=float)
    keep = (v > 0) & (w > 0)
    if not keep.any():
        return -np.inf
    terms = q * np.log(v[keep]) + np.log(w[keep])
    top = terms.max()
    return float(top + np.log(np.exp(terms - top).sum()))
