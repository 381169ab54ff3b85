# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selection kernels; same contract as ``_fallback``."""
from libc.math cimport sqrt, fabs, INFINITY

import numpy as np

NAME = "cython"


cdef inline double _row_value(Py_ssize_t i, Py_ssize_t s,
                              const long long[::1] image,
                              const long long[:, ::1] centers,
                              const double[:, ::1] feats,
                              double lambda_f, double feat_div, double f_cap,
                              double lambda_s, double spat_div,
                              int use_f, int use_s, int linear, int p_code,
                              double a, double b, double c, double tau,
                              double cross) noexcept nogil:
    cdef double total = 0.0, acc, df, ds, gap, dr, dc
    cdef double e0, e1, e2, e3, a0, a1, a2, a3
    cdef Py_ssize_t k, d, d4
    if i == s:
        return 0.0
    if use_f:
        # four independent accumulators: fixed order, but no serial dependency
        a0 = a1 = a2 = a3 = 0.0
        d = feats.shape[1]
        d4 = d - d % 4
        for k in range(0, d4, 4):
            e0 = feats[i, k] - feats[s, k]
            e1 = feats[i, k + 1] - feats[s, k + 1]
            e2 = feats[i, k + 2] - feats[s, k + 2]
            e3 = feats[i, k + 3] - feats[s, k + 3]
            a0 += e0 * e0
            a1 += e1 * e1
            a2 += e2 * e2
            a3 += e3 * e3
        for k in range(d4, d):
            e0 = feats[i, k] - feats[s, k]
            a0 += e0 * e0
        acc = (a0 + a1) + (a2 + a3)
        df = sqrt(acc) / feat_div
        if df > f_cap:
            df = f_cap
        total = total + lambda_f * df
    if use_s:
        if image[i] != image[s]:
            ds = cross if linear else c
        else:
            dr = fabs(<double>(centers[i, 0] - centers[s, 0]))
            dc = fabs(<double>(centers[i, 1] - centers[s, 1]))
            if p_code == 0:
                gap = dr if dr > dc else dc
            elif p_code == 1:
                gap = dr + dc
            else:
                gap = sqrt(dr * dr + dc * dc)
            if linear:
                ds = gap
            else:
                ds = a if gap <= tau else b
        total = total + lambda_s * ds / spat_div
    return total


def combined_row(Py_ssize_t s, image, centers, feats, p, double[::1] out):
    cdef const long long[::1] im = image
    cdef const long long[:, ::1] ce = centers
    cdef const double[:, ::1] fe = feats
    cdef Py_ssize_t i, n = im.shape[0]
    cdef double lf = p.lambda_f, fdiv = p.feat_div, fcap = p.f_cap, ls = p.lambda_s, sdiv = p.spat_div
    cdef int use_f = lf > 0 and fdiv > 0
    cdef int use_s = ls > 0 and sdiv > 0
    cdef int linear = p.linear, p_code = p.p_code
    cdef double a = p.a, b = p.b, c = p.c, tau = p.tau, cross = p.cross
    with nogil:
        for i in range(n):
            out[i] = _row_value(i, s, im, ce, fe, lf, fdiv, fcap, ls, sdiv, use_f, use_s,
                                linear, p_code, a, b, c, tau, cross)
    return np.asarray(out)


def update_min_cache(double[::1] cache, Py_ssize_t s, image, centers, feats, p, work=None):
    cdef const long long[::1] im = image
    cdef const long long[:, ::1] ce = centers
    cdef const double[:, ::1] fe = feats
    cdef Py_ssize_t i, n = im.shape[0]
    cdef double lf = p.lambda_f, fdiv = p.feat_div, fcap = p.f_cap, ls = p.lambda_s, sdiv = p.spat_div
    cdef int use_f = lf > 0 and fdiv > 0
    cdef int use_s = ls > 0 and sdiv > 0
    cdef int linear = p.linear, p_code = p.p_code
    cdef double a = p.a, b = p.b, c = p.c, tau = p.tau, cross = p.cross
    cdef double v
    with nogil:
        for i in range(n):
            v = _row_value(i, s, im, ce, fe, lf, fdiv, fcap, ls, sdiv, use_f, use_s,
                           linear, p_code, a, b, c, tau, cross)
            if v < cache[i]:
                cache[i] = v


def masked_argmax(double lambda_u, const double[::1] u, const double[::1] cache,
                  available):
    cdef const unsigned char[::1] av = available.view(np.uint8)
    cdef Py_ssize_t i, best = -1, n = u.shape[0]
    cdef double phi, best_phi = -INFINITY
    with nogil:
        for i in range(n):
            if av[i]:
                phi = lambda_u * u[i] + cache[i]
                if best < 0 or phi > best_phi:
                    best = i
                    best_phi = phi
    return best
