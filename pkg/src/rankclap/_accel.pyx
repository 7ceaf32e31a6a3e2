# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: deterministic RNG fills, ranked-contrast scan, retrieval.

Mirrors rankclap._kernels_py function for function; see that module for the
contract docs.  Integer outputs are bit-identical to the fallback, float
outputs agree to a few ulp.
"""

from libc.math cimport INFINITY, cos, exp, fabs, log, log1p, sin, sqrt
from libc.stdint cimport int64_t, uint8_t, uint64_t

import numpy as np

ACCELERATED = True

cdef double _INV53 = 2.0 ** -53
cdef double _TWO_PI = 6.283185307179586
cdef double _LN2 = 0.6931471805599453


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _next(uint64_t *s) nogil:
    cdef uint64_t out = _rotl(s[0] + s[3], 23) + s[0]
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return out


cdef inline double _logaddexp(double a, double b) nogil:
    cdef double d
    if a == b:
        if a == -INFINITY:
            return -INFINITY
        return a + _LN2
    d = fabs(a - b)
    if a > b:
        return a + log1p(exp(-d))
    return b + log1p(exp(-d))


def fill_uniform(object state, Py_ssize_t n):
    cdef uint64_t s[4]
    s[0], s[1], s[2], s[3] = state
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = <double> (_next(s) >> 11) * _INV53
    return out_arr, (s[0], s[1], s[2], s[3])


def fill_normal(object state, Py_ssize_t n):
    cdef uint64_t s[4]
    s[0], s[1], s[2], s[3] = state
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, npairs = (n + 1) // 2
    cdef uint64_t x, y
    cdef double u1, u2, r, a
    for i in range(npairs):
        x = _next(s)
        y = _next(s)
        u1 = <double> ((x >> 11) + 1) * _INV53
        u2 = <double> (y >> 11) * _INV53
        r = sqrt(-2.0 * log(u1))
        a = _TWO_PI * u2
        out[2 * i] = r * cos(a)
        if 2 * i + 1 < n:
            out[2 * i + 1] = r * sin(a)
    return out_arr, (s[0], s[1], s[2], s[3])


def rnc_scan(object z_in, object same_in):
    z_arr = np.ascontiguousarray(z_in, dtype=np.float64)
    same_arr = np.ascontiguousarray(same_in, dtype=np.uint8)
    cdef double[:, ::1] z = z_arr
    cdef uint8_t[:, ::1] same = same_arr
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1]
    denom_arr = np.empty((n, m), dtype=np.float64)
    grad_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] denom = denom_arr
    cdef double[:, ::1] grad = grad_arr
    suffix_arr = np.empty(m + 1, dtype=np.float64)
    w_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] suffix = suffix_arr
    cdef double[::1] w = w_arr
    cdef Py_ssize_t i, t, g0, g1
    cdef double acc, lse_gt, before
    for i in range(n):
        suffix[m] = -INFINITY
        acc = -INFINITY
        for t in range(m - 1, -1, -1):
            acc = _logaddexp(acc, z[i, t])
            suffix[t] = acc
        g0 = 0
        before = 0.0
        while g0 < m:
            g1 = g0 + 1
            while g1 < m and same[i, g1]:
                g1 += 1
            lse_gt = suffix[g1]
            for t in range(g0, g1):
                denom[i, t] = _logaddexp(lse_gt, z[i, t])
                w[t] = exp(-denom[i, t])
            for t in range(g0, g1):
                grad[i, t] = exp(z[i, t]) * before + exp(z[i, t] - denom[i, t]) - 1.0
            for t in range(g0, g1):
                before += w[t]
            g0 = g1
    return denom_arr, grad_arr


def greedy_retrieve(object sim_in):
    sim_arr = np.ascontiguousarray(sim_in, dtype=np.float64)
    cdef double[:, ::1] sim = sim_arr
    cdef Py_ssize_t n_q = sim.shape[0], n_g = sim.shape[1]
    picks_arr = np.empty(n_q, dtype=np.int64)
    cdef int64_t[::1] picks = picks_arr
    avail_arr = np.ones(n_g, dtype=np.uint8)
    cdef uint8_t[::1] avail = avail_arr
    cdef Py_ssize_t q, k, best
    cdef double best_val
    for q in range(n_q):
        best = -1
        best_val = -INFINITY
        for k in range(n_g):
            if avail[k] and sim[q, k] > best_val:
                best = k
                best_val = sim[q, k]
        picks[q] = best
        avail[best] = 0
    return picks_arr
