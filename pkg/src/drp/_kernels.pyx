# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: fused Adam update and embedding row scatter/pooling.

Semantics match ``drp._kernels_py`` exactly; that module is the fallback.
"""
from libc.math cimport sqrt, pow
from libc.stdint cimport int32_t, int64_t


def adam_update(double[::1] value, const double[::1] grad, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, long step):
    cdef Py_ssize_t i, n = value.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, step), bc2 = 1.0 - pow(beta2, step)
    cdef double lr_t = lr * sqrt(bc2) / bc1, eps_t = eps * sqrt(bc2)
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2
    cdef double g
    cdef double *pv
    cdef const double *pg
    cdef double *pm
    cdef double *ps
    if n == 0:
        return
    # raw pointers let the compiler vectorize the loop
    pv = &value[0]
    pg = &grad[0]
    pm = &m[0]
    ps = &v[0]
    with nogil:
        for i in range(n):
            g = pg[i]
            pm[i] = beta1 * pm[i] + c1 * g
            ps[i] = beta2 * ps[i] + c2 * (g * g)
            pv[i] = pv[i] - lr_t * pm[i] / (sqrt(ps[i]) + eps_t)


def scatter_add_rows(double[:, ::1] target, const int64_t[::1] idx,
                     const double[:, ::1] rows):
    cdef Py_ssize_t k, j, r, n = idx.shape[0], d = target.shape[1]
    with nogil:
        for k in range(n):
            r = idx[k]
            for j in range(d):
                target[r, j] += rows[k, j]


def mean_pool_forward(const double[:, ::1] table, const int32_t[:, ::1] hist,
                      const int64_t[::1] lengths, double[:, ::1] out):
    cdef Py_ssize_t b, k, j, r, n, nb = hist.shape[0], d = table.shape[1]
    with nogil:
        for b in range(nb):
            for j in range(d):
                out[b, j] = 0.0
            n = lengths[b]
            if n == 0:
                continue
            for k in range(n):
                r = hist[b, k]
                for j in range(d):
                    out[b, j] += table[r, j]
            for j in range(d):
                out[b, j] = out[b, j] / n


def mean_pool_backward(double[:, ::1] grad_table, const int32_t[:, ::1] hist,
                       const int64_t[::1] lengths, const double[:, ::1] dpooled):
    cdef Py_ssize_t b, k, j, r, n, nb = hist.shape[0], d = grad_table.shape[1]
    with nogil:
        for b in range(nb):
            n = lengths[b]
            for k in range(n):
                r = hist[b, k]
                for j in range(d):
                    grad_table[r, j] += dpooled[b, j] / n
