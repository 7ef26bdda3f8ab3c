# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``.

Inputs are C-contiguous float64 buffers; the selector in ``__init__`` does
the reshaping and validation.
"""

from libc.math cimport sqrt, exp
from libc.stdint cimport int64_t

import numpy as np

cdef double KURT_VAR_FLOOR = 1e-12
cdef double KURT_STD_GUARD = 1e-8


def sgd_momentum_update(double[::1] w, const double[::1] g, double[::1] v,
                        double lr, double momentum, double weight_decay):
    cdef Py_ssize_t i, n = w.shape[0]
    for i in range(n):
        v[i] = momentum * v[i] + g[i] + weight_decay * w[i]
        w[i] = w[i] - lr * v[i]


def column_kurtosis(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double mu, c, m2, std, z2, e2, e4
    kurt = np.zeros(d)
    valid = np.zeros(d, dtype=bool)
    cdef double[::1] k = kurt
    for j in range(d):
        mu = 0.0
        for i in range(n):
            mu += x[i, j]
        mu /= n
        m2 = 0.0
        for i in range(n):
            c = x[i, j] - mu
            m2 += c * c
        m2 /= n
        if m2 < KURT_VAR_FLOOR:
            continue
        valid[j] = True
        std = sqrt(m2)
        if std < KURT_STD_GUARD:
            std = KURT_STD_GUARD
        e2 = 0.0
        e4 = 0.0
        for i in range(n):
            c = (x[i, j] - mu) / std
            z2 = c * c
            e2 += z2
            e4 += z2 * z2
        e2 /= n
        e4 /= n
        k[j] = e4 - 3.0 * e2 * e2
    return kurt, valid


def probe_train(const double[:, ::1] x, const int64_t[::1] y,
                double[:, ::1] w1, double[::1] b1, double[:, ::1] w2, double[::1] b2,
                int epochs, double lr):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], h = w1.shape[1], K = w2.shape[1]
    cdef Py_ssize_t i, j, a, c, ep
    cdef double s, mx, tot, xv, dv, inv_n = 1.0 / n
    z_arr = np.empty((n, h))
    gw1_arr = np.empty((d, h))
    gb1_arr = np.empty(h)
    gw2t_arr = np.empty((K, h))
    gb2_arr = np.empty(K)
    da_arr = np.empty(h)
    dl_arr = np.empty(K)
    w2t_arr = np.empty((K, h))
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] gw1 = gw1_arr
    cdef double[::1] gb1 = gb1_arr
    cdef double[:, ::1] gw2t = gw2t_arr
    cdef double[::1] gb2 = gb2_arr
    cdef double[::1] da = da_arr
    cdef double[::1] dl = dl_arr
    # w2 transposed so every inner loop runs over contiguous hidden units
    cdef double[:, ::1] w2t = w2t_arr

    for ep in range(epochs):
        for a in range(h):
            for c in range(K):
                w2t[c, a] = w2[a, c]
        for i in range(n):
            for a in range(h):
                z[i, a] = b1[a]
            for j in range(d):
                xv = x[i, j]
                for a in range(h):
                    z[i, a] += xv * w1[j, a]
        np.tanh(z_arr, out=z_arr)

        gw1[:, :] = 0.0
        gb1[:] = 0.0
        gw2t[:, :] = 0.0
        gb2[:] = 0.0
        for i in range(n):
            mx = -1e300
            for c in range(K):
                s = b2[c]
                for a in range(h):
                    s += z[i, a] * w2t[c, a]
                dl[c] = s
                if s > mx:
                    mx = s
            tot = 0.0
            for c in range(K):
                dl[c] = exp(dl[c] - mx)
                tot += dl[c]
            for c in range(K):
                dl[c] = dl[c] / tot
            dl[y[i]] -= 1.0
            for a in range(h):
                da[a] = 0.0
            for c in range(K):
                dv = dl[c] * inv_n
                gb2[c] += dv
                for a in range(h):
                    gw2t[c, a] += z[i, a] * dv
                    da[a] += dv * w2t[c, a]
            for a in range(h):
                da[a] = da[a] * (1.0 - z[i, a] * z[i, a])
                gb1[a] += da[a]
            for j in range(d):
                xv = x[i, j]
                for a in range(h):
                    gw1[j, a] += xv * da[a]

        for a in range(h):
            for c in range(K):
                w2[a, c] -= lr * gw2t[c, a]
        for c in range(K):
            b2[c] -= lr * gb2[c]
        for j in range(d):
            for a in range(h):
                w1[j, a] -= lr * gw1[j, a]
        for a in range(h):
            b1[a] -= lr * gb1[a]


def probe_predict(const double[:, ::1] x, const double[:, ::1] w1, const double[::1] b1,
                  const double[:, ::1] w2, const double[::1] b2):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], h = w1.shape[1], K = w2.shape[1]
    cdef Py_ssize_t i, j, a, c, best
    cdef double s, top
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    z_arr = np.empty((n, h))
    cdef double[:, ::1] z = z_arr
    for i in range(n):
        for a in range(h):
            s = b1[a]
            for j in range(d):
                s += x[i, j] * w1[j, a]
            z[i, a] = s
    np.tanh(z_arr, out=z_arr)
    for i in range(n):
        best = 0
        top = -1e300
        for c in range(K):
            s = b2[c]
            for a in range(h):
                s += z[i, a] * w2[a, c]
            if s > top:
                top = s
                best = c
        o[i] = best
    return out
