# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused optimizer loop. Arithmetic order matches ``_pykernels.adam_update`` so both
backends produce bit-identical parameters (the extension is built without FMA
contraction)."""

from libc.math cimport sqrt, isfinite


def all_finite(double[::1] g):
    cdef Py_ssize_t i
    for i in range(g.shape[0]):
        if not isfinite(g[i]):
            return False
    return True


def adam_update(double[::1] value, double[::1] m, double[::1] v, double[::1] g,
                double b1, double b2, double c1, double c2, double lr, double eps):
    cdef Py_ssize_t i
    cdef double gi, mi, vi, d
    cdef double a1 = 1.0 - b1
    cdef double a2 = 1.0 - b2
    cdef double step = lr / c1
    for i in range(value.shape[0]):
        gi = g[i]
        mi = m[i] * b1
        mi = mi + a1 * gi
        m[i] = mi
        d = gi * gi
        d = d * a2
        vi = v[i] * b2
        vi = vi + d
        v[i] = vi
        d = sqrt(vi / c2) + eps
        d = mi / d
        d = d * step
        value[i] = value[i] - d
        g[i] = 0.0
