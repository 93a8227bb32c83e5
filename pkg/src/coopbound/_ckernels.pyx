# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sqrt, pow, INFINITY

cnp.import_array()

DEF HIST = 8


cdef inline double _spec2(double a, double b, double c, double d) nogil:
    # largest singular value of [[a, b], [c, d]]
    cdef double s = a * a + b * b + c * c + d * d
    cdef double det = a * d - b * c
    cdef double disc = s * s - 4.0 * det * det
    if disc < 0.0:
        disc = 0.0
    return sqrt(0.5 * (s + sqrt(disc)))


def diag_series(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                Py_ssize_t p, double tol, Py_ssize_t max_iter):
    """Sum ``sum_{n>=1} [A^n]_{pp}`` for block ``p`` of a CSR matrix (see the numpy version)."""
    cdef Py_ssize_t m2 = indptr.shape[0] - 1
    cdef double[:, ::1] x = np.zeros((m2, 2))
    cdef double[:, ::1] y = np.zeros((m2, 2))
    cdef double[:, ::1] tmp
    cdef double[::1] hist = np.zeros(HIST + 1)
    cdef double d00 = 0, d01 = 0, d10 = 0, d11 = 0
    cdef double s0, s1, h, inc, old, rho, resid = INFINITY
    cdef Py_ssize_t n = 0, r, k, j
    cdef bint converged = False
    x[2 * p, 0] = 1.0
    x[2 * p + 1, 1] = 1.0
    with nogil:
        while n < max_iter:
            h = 0.0
            for r in range(m2):
                s0 = 0.0
                s1 = 0.0
                for k in range(indptr[r], indptr[r + 1]):
                    j = indices[k]
                    s0 = s0 + data[k] * x[j, 0]
                    s1 = s1 + data[k] * x[j, 1]
                y[r, 0] = s0
                y[r, 1] = s1
                h = h + s0 * s0 + s1 * s1
            tmp = x
            x = y
            y = tmp
            n += 1
            d00 += x[2 * p, 0]
            d01 += x[2 * p, 1]
            d10 += x[2 * p + 1, 0]
            d11 += x[2 * p + 1, 1]
            h = sqrt(h)
            hist[n % (HIST + 1)] = h
            inc = _spec2(x[2 * p, 0], x[2 * p, 1], x[2 * p + 1, 0], x[2 * p + 1, 1])
            if h == 0.0:
                resid = 0.0
                converged = True
                break
            if n > HIST:
                old = hist[(n - HIST) % (HIST + 1)]
                if old > 0:
                    rho = pow(h / old, 1.0 / HIST)
                else:
                    rho = 0.0
                if rho < 1.0:
                    resid = h * rho / (1.0 - rho)
                else:
                    resid = INFINITY
                if inc < tol and resid < tol:
                    converged = True
                    break
    delta = np.array([[d00, d01], [d10, d11]])
    return delta, n, resid, converged


def characteristic_grid(const double[:, ::1] offsets, const double[:, :, ::1] blocks,
                        const double[:, ::1] thetas):
    """``Phi(theta) = sum_x B_x cos(x . theta)`` for many frequencies."""
    cdef Py_ssize_t K = offsets.shape[0], M = thetas.shape[0], m, k
    out_arr = np.zeros((M, 2, 2))
    cdef double[:, :, ::1] out = out_arr
    cdef double c
    with nogil:
        for m in range(M):
            for k in range(K):
                c = cos(offsets[k, 0] * thetas[m, 0] + offsets[k, 1] * thetas[m, 1])
                out[m, 0, 0] += c * blocks[k, 0, 0]
                out[m, 0, 1] += c * blocks[k, 0, 1]
                out[m, 1, 0] += c * blocks[k, 1, 0]
                out[m, 1, 1] += c * blocks[k, 1, 1]
    return out_arr


def potential_quadrature(const double[:, ::1] offsets, const double[:, :, ::1] blocks,
                         const double[:, ::1] thetas, const double[::1] weights,
                         const double[:, ::1] displacements):
    """Weighted sum ``sum_m w_m (I - Phi_m)^-1 (1 - cos(x . theta_m))`` in one pass."""
    cdef Py_ssize_t K = offsets.shape[0], M = thetas.shape[0], L = displacements.shape[0]
    cdef Py_ssize_t m, k, l
    out_arr = np.zeros((L, 2, 2))
    cdef double[:, :, ::1] out = out_arr
    cdef double c, p00, p01, p10, p11, a, b, cc, d, det, i00, i01, i10, i11, g, t0, t1
    with nogil:
        for m in range(M):
            t0 = thetas[m, 0]
            t1 = thetas[m, 1]
            p00 = 0.0
            p01 = 0.0
            p10 = 0.0
            p11 = 0.0
            for k in range(K):
                c = cos(offsets[k, 0] * t0 + offsets[k, 1] * t1)
                p00 += c * blocks[k, 0, 0]
                p01 += c * blocks[k, 0, 1]
                p10 += c * blocks[k, 1, 0]
                p11 += c * blocks[k, 1, 1]
            a = 1.0 - p00
            d = 1.0 - p11
            b = -p01
            cc = -p10
            det = a * d - b * cc
            g = weights[m] / det
            i00 = d * g
            i01 = -b * g
            i10 = -cc * g
            i11 = a * g
            for l in range(L):
                c = 1.0 - cos(displacements[l, 0] * t0 + displacements[l, 1] * t1)
                out[l, 0, 0] += c * i00
                out[l, 0, 1] += c * i01
                out[l, 1, 0] += c * i10
                out[l, 1, 1] += c * i11
    return out_arr
