# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: RMS pose distance, greedy keyframe scan, attention loss."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef double _rms(const double[:] a, const double[:] b) noexcept nogil:
    cdef Py_ssize_t k, n = a.shape[0]
    cdef double acc = 0.0, d
    for k in range(n):
        d = a[k] - b[k]
        acc += d * d
    return sqrt(acc / n)


def rms_distance(a, b):
    cdef const double[:] x = np.ascontiguousarray(a, dtype=np.float64).ravel()
    cdef const double[:] y = np.ascontiguousarray(b, dtype=np.float64).ravel()
    return _rms(x, y)


def greedy_keyframes(poses, double d_pose, Py_ssize_t s_max):
    arr = np.ascontiguousarray(poses, dtype=np.float64)
    cdef const double[:, :] p = arr.reshape(arr.shape[0], -1)
    cdef Py_ssize_t n = p.shape[0], i = 0, j, nxt
    keys = [0]
    while i < n - 1:
        nxt = i + 1
        j = min(i + s_max, n - 1)
        while j > i:
            if _rms(p[i], p[j]) < d_pose:
                nxt = j
                break
            j -= 1
        keys.append(nxt)
        i = nxt
    return keys


def agn_loss_grad(S, in_mask, double lambda_n, bint refined, bint want_grad=True):
    cdef const double[:, :] s = np.ascontiguousarray(S, dtype=np.float64)
    cdef const cnp.uint8_t[:, :] a = np.ascontiguousarray(in_mask, dtype=np.uint8)
    cdef Py_ssize_t n = s.shape[0], t = s.shape[1], i, k, arg
    out = np.zeros((n, t), dtype=np.float64)
    cdef double[:, :] g = out
    cdef double loss = 0.0, v, top
    for i in range(n):
        arg = -1
        top = 0.0
        for k in range(t):
            v = s[i, k]
            if a[i, k]:
                if refined:
                    if arg < 0 or v > top:
                        arg = k
                        top = v
                else:
                    loss += (1.0 - v) * (1.0 - v)
                    g[i, k] = -2.0 * (1.0 - v)
            else:
                loss += lambda_n * v * v
                g[i, k] = 2.0 * lambda_n * v
        if refined and arg >= 0:
            loss += (1.0 - top) * (1.0 - top)
            g[i, arg] = -2.0 * (1.0 - top)
    return loss, (out if want_grad else None)
