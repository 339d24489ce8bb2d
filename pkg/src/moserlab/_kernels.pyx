# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled element loops; see _kernels_py for the reference implementation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow, log, exp, fabs, INFINITY

cnp.import_array()


cdef inline void _radial(int code, double p, double q, double mu, double t,
                         double *a, double *b) noexcept nogil:
    # a = A0(t), b = A0'(t)/t
    cdef double s
    if code == 0:
        a[0] = pow(t, p - 2.0)
        b[0] = (p - 2.0) * pow(t, p - 4.0)
    elif code == 1:
        a[0] = pow(t, p - 2.0) + mu * pow(t, q - 2.0)
        b[0] = (p - 2.0) * pow(t, p - 4.0) + mu * (q - 2.0) * pow(t, q - 4.0)
    else:
        s = 1.0 + t * t
        a[0] = pow(s, 0.5 * (p - 2.0))
        b[0] = (p - 2.0) * pow(s, 0.5 * (p - 4.0))


def flux_assembly(int code, double p, double q, double mu, double delta,
                  const double[:, :, ::1] grads, const double[::1] areas,
                  const long[:, ::1] tri, const double[::1] u, bint want_jac):
    """Residual contribution of int A(grad u).grad(phi_i) and local Jacobian blocks.

    Returns ``(res, jac, n_zero)`` where ``n_zero`` counts elements with a
    vanishing (regularized) gradient; those are left at zero.
    """
    cdef Py_ssize_t m = tri.shape[0], n = u.shape[0]
    cdef Py_ssize_t e, i, j
    cdef double gx, gy, t, a, b, fx, fy, ar, j00, j01, j11, vi0, vi1
    cdef int n_zero = 0
    res_arr = np.zeros(n)
    cdef double[::1] res = res_arr
    jac_arr = np.zeros((m if want_jac else 0, 3, 3))
    cdef double[:, :, ::1] jac = jac_arr
    with nogil:
        for e in range(m):
            gx = 0.0
            gy = 0.0
            for i in range(3):
                gx = gx + u[tri[e, i]] * grads[e, i, 0]
                gy = gy + u[tri[e, i]] * grads[e, i, 1]
            t = sqrt(gx * gx + gy * gy + delta * delta)
            if t == 0.0:
                n_zero += 1
                continue
            _radial(code, p, q, mu, t, &a, &b)
            ar = areas[e]
            fx = a * gx
            fy = a * gy
            for i in range(3):
                res[tri[e, i]] += ar * (fx * grads[e, i, 0] + fy * grads[e, i, 1])
            if want_jac:
                j00 = a + b * gx * gx
                j01 = b * gx * gy
                j11 = a + b * gy * gy
                for i in range(3):
                    vi0 = j00 * grads[e, i, 0] + j01 * grads[e, i, 1]
                    vi1 = j01 * grads[e, i, 0] + j11 * grads[e, i, 1]
                    for j in range(3):
                        jac[e, i, j] = ar * (vi0 * grads[e, j, 0] + vi1 * grads[e, j, 1])
    return res_arr, (jac_arr if want_jac else None), n_zero


def log_power_sum(const double[::1] values, const double[::1] weights, double q):
    """log(sum_k w_k |v_k|^q) by two-pass log-sum-exp; -inf if every term vanishes."""
    cdef Py_ssize_t k, n = values.shape[0], m = 0
    cdef double top = -INFINITY, acc = 0.0, av
    terms_arr = np.empty(n)
    cdef double[::1] terms = terms_arr
    with nogil:
        for k in range(n):
            av = fabs(values[k])
            if av > 0.0 and weights[k] > 0.0:
                terms[m] = q * log(av) + log(weights[k])
                if terms[m] > top:
                    top = terms[m]
                m += 1
        for k in range(m):
            acc = acc + exp(terms[k] - top)
    if m == 0:
        return -INFINITY
    return top + log(acc)
