# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the loops numpy cannot fuse.

Row-softmax, cross-entropy and edit distance spend their time in
per-row scalar loops with several numpy passes each; compiled loops do
one pass and win 2-80x at desk-scale sizes. Matrix products are *not*
compiled: the numpy/BLAS path beats a naive loop well below this
package's smallest matmul, so the backend dispatcher keeps BLAS for
those (see benchmarks/bench_kernels.py for the measurements).
"""

import numpy as np

from libc.math cimport exp, log

BACKEND_NAME = "c"


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef double mx, s
    with nogil:
        for i in range(m):
            mx = x[i, 0]
            for j in range(1, n):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(n):
                o[i, j] = exp(x[i, j] - mx)
                s += o[i, j]
            for j in range(n):
                o[i, j] /= s
    return out


def softmax_rows_grad(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef double dot
    with nogil:
        for i in range(m):
            dot = 0.0
            for j in range(n):
                dot += g[i, j] * y[i, j]
            for j in range(n):
                o[i, j] = y[i, j] * (g[i, j] - dot)
    return out


def cross_entropy(double[:, ::1] logits, long[::1] labels, ignore_index):
    cdef Py_ssize_t m = logits.shape[0], v = logits.shape[1], i, j
    cdef long ign = -1
    cdef bint has_ign = ignore_index is not None
    if has_ign:
        ign = ignore_index
    probs = np.empty((m, v))
    kept = np.empty(m, dtype=bool)
    cdef double[:, ::1] p = probs
    cdef char[::1] k = kept.view(np.int8)
    cdef double mx, s, total = 0.0
    cdef Py_ssize_t n_kept = 0
    with nogil:
        for i in range(m):
            mx = logits[i, 0]
            for j in range(1, v):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            s = 0.0
            for j in range(v):
                p[i, j] = exp(logits[i, j] - mx)
                s += p[i, j]
            for j in range(v):
                p[i, j] /= s
            if has_ign and labels[i] == ign:
                k[i] = 0
            else:
                k[i] = 1
                n_kept += 1
                total += log(s) - (logits[i, labels[i]] - mx)
    if n_kept == 0:
        return 0.0, probs, kept, 0
    return total / n_kept, probs, kept, n_kept


def cross_entropy_grad(double[:, ::1] probs, long[::1] labels,
                       kept, long n_kept, double gscale):
    cdef Py_ssize_t m = probs.shape[0], v = probs.shape[1], i, j
    out = np.empty((m, v))
    cdef double[:, ::1] o = out
    cdef const char[::1] k = kept.view(np.int8)
    cdef double scale = gscale / n_kept
    with nogil:
        for i in range(m):
            if k[i]:
                for j in range(v):
                    o[i, j] = probs[i, j] * scale
                o[i, labels[i]] -= scale
            else:
                for j in range(v):
                    o[i, j] = 0.0
    return out


def levenshtein(long[::1] a, long[::1] b):
    cdef Py_ssize_t la = a.shape[0], lb = b.shape[0], i, j
    if la == 0:
        return lb
    if lb == 0:
        return la
    buf = np.empty((2, lb + 1), dtype=np.int64)
    cdef long[:, ::1] d = buf
    cdef long sub, best
    cdef Py_ssize_t cur = 1, prev = 0
    with nogil:
        for j in range(lb + 1):
            d[0, j] = j
        for i in range(1, la + 1):
            d[cur, 0] = i
            for j in range(1, lb + 1):
                sub = d[prev, j - 1] + (0 if a[i - 1] == b[j - 1] else 1)
                best = sub
                if d[prev, j] + 1 < best:
                    best = d[prev, j] + 1
                if d[cur, j - 1] + 1 < best:
                    best = d[cur, j - 1] + 1
                d[cur, j] = best
            prev, cur = cur, prev
    return int(buf[prev, lb])
