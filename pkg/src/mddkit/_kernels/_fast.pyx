# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the pure numpy kernels.

Same contracts and the same arithmetic order as ``pure``; only the loop
machinery differs. See pure.py for the reference semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


cdef inline double _lse3(double a, double b, double c) noexcept:
    cdef double m = a
    if b > m:
        m = b
    if c > m:
        m = c
    if m == -INFINITY:
        return -INFINITY
    return m + log(exp(a - m) + exp(b - m) + exp(c - m))


def ctc_forward_backward(logp, targets, int blank):
    """CTC loss and gradient w.r.t. log-probabilities; see pure twin."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] lp = np.ascontiguousarray(logp, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tgt = np.ascontiguousarray(targets, dtype=np.int64)
    cdef Py_ssize_t n = lp.shape[0]
    cdef Py_ssize_t m = tgt.shape[0]
    cdef Py_ssize_t S = 2 * m + 1
    cdef Py_ssize_t t, s

    cdef cnp.ndarray[cnp.int64_t, ndim=1] z = np.full(S, blank, dtype=np.int64)
    for s in range(m):
        z[2 * s + 1] = tgt[s]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] allow_skip = np.zeros(S, dtype=np.uint8)
    for s in range(2, S):
        if z[s] != blank and z[s] != z[s - 2]:
            allow_skip[s] = 1

    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.full((n, S), -np.inf)
    cdef double stay, left, skip
    a[0, 0] = lp[0, z[0]]
    if S > 1:
        a[0, 1] = lp[0, z[1]]
    for t in range(1, n):
        for s in range(S):
            stay = a[t - 1, s]
            left = a[t - 1, s - 1] if s >= 1 else -INFINITY
            skip = a[t - 1, s - 2] if (s >= 2 and allow_skip[s]) else -INFINITY
            a[t, s] = lp[t, z[s]] + _lse3(stay, left, skip)

    cdef double log_total = a[n - 1, S - 1]
    if S > 1:
        log_total = _lse3(log_total, a[n - 1, S - 2], -INFINITY)
    if log_total == -INFINITY or log_total != log_total:
        return float("inf"), np.zeros((n, lp.shape[1]))

    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.full((n, S), -np.inf)
    b[n - 1, S - 1] = lp[n - 1, z[S - 1]]
    if S > 1:
        b[n - 1, S - 2] = lp[n - 1, z[S - 2]]
    for t in range(n - 2, -1, -1):
        for s in range(S):
            stay = b[t + 1, s]
            left = b[t + 1, s + 1] if s + 1 < S else -INFINITY
            skip = b[t + 1, s + 2] if (s + 2 < S and allow_skip[s + 2]) else -INFINITY
            b[t, s] = lp[t, z[s]] + _lse3(stay, left, skip)

    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.zeros((n, lp.shape[1]))
    cdef double post
    for t in range(n):
        for s in range(S):
            post = a[t, s] + b[t, s] - lp[t, z[s]] - log_total
            if post > -INFINITY:
                grad[t, z[s]] -= exp(post)
    return -log_total, grad


def nw_coupling(alpha, beta):
    """Monotone 1D transport plan; see pure twin for the closed form."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] be = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t n = al.shape[0]
    cdef Py_ssize_t m = be.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] A = np.empty(n + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] B = np.empty(m + 1)
    cdef Py_ssize_t i, j
    A[0] = 0.0
    for i in range(n):
        A[i + 1] = A[i] + al[i]
    B[0] = 0.0
    for j in range(m):
        B[j + 1] = B[j] + be[j]

    cdef cnp.ndarray[cnp.float64_t, ndim=2] gamma = np.zeros((n, m))
    if n == 0 or m == 0:
        return gamma
    cdef double lo, hi, v
    i = 0
    j = 0
    # staircase walk: off-path cells are exactly zero under the closed form
    while True:
        lo = A[i] if A[i] > B[j] else B[j]
        hi = A[i + 1] if A[i + 1] < B[j + 1] else B[j + 1]
        v = hi - lo
        if v > 0.0:
            gamma[i, j] = v
        if i == n - 1 and j == m - 1:
            break
        if j == m - 1:
            i += 1
        elif i == n - 1:
            j += 1
        elif A[i + 1] < B[j + 1]:
            i += 1
        elif A[i + 1] > B[j + 1]:
            j += 1
        else:
            i += 1
            j += 1
    return gamma


def seg_dp_extend(prev_row, logcol):
    """One-token extension of the segmentation DP row; see pure twin."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] prev = np.ascontiguousarray(prev_row, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] col = np.ascontiguousarray(logcol, dtype=np.float64)
    cdef Py_ssize_t n = col.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n + 1)
    cdef double C = 0.0
    cdef double run = -INFINITY
    cdef double v
    cdef Py_ssize_t t
    out[0] = -INFINITY
    for t in range(n):
        v = prev[t] - C
        if v > run:
            run = v
        C = C + col[t]
        out[t + 1] = C + run
    return out
