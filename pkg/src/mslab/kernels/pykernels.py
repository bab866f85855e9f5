"""Numpy implementations of the hot numeric kernels.

The compiled extension (`_ckernels.pyx`) mirrors every signature here;
`mslab.kernels` picks one backend at import time. All arrays are
C-contiguous float64 unless stated otherwise.
"""

import numpy as np

BACKEND_NAME = "py"


def matmul(a, b):
    return a @ b


def matmul_grad_a(g, b):
    return g @ b.T


def matmul_grad_b(a, g):
    return a.T @ g


def bmm(a, b, transpose_b=False):
    """Batched matrix product over the leading axis."""
    if transpose_b:
        return a @ b.transpose(0, 2, 1)
    return a @ b


def bmm_grad_a(g, b, transpose_b=False):
    if transpose_b:
        return g @ b
    return g @ b.transpose(0, 2, 1)


def bmm_grad_b(g, a, transpose_b=False):
    # out = a @ b^T: d/db = g^T @ a; out = a @ b: d/db = a^T @ g
    if transpose_b:
        return g.transpose(0, 2, 1) @ a
    return a.transpose(0, 2, 1) @ g


def softmax_rows(x):
    """Row softmax of a 2-d array with max-subtraction stabilization."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_grad(y, g):
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


def cross_entropy(logits, labels, ignore_index):
    """Mean negative log-likelihood over non-ignored rows.

    Returns (loss, probs, kept, n_kept); `probs` are the row softmaxes
    saved for the backward pass, `kept` a boolean row mask.
    """
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    if ignore_index is None:
        kept = np.ones(labels.shape[0], dtype=bool)
    else:
        kept = labels != ignore_index
    n_kept = int(kept.sum())
    if n_kept == 0:
        return 0.0, probs, kept, 0
    safe = np.where(kept, labels, 0)
    rows = np.arange(labels.shape[0])
    nll = np.log(z[:, 0]) - shifted[rows, safe]
    loss = float(nll[kept].sum() / n_kept)
    return loss, probs, kept, n_kept


def cross_entropy_grad(probs, labels, kept, n_kept, gscale):
    """d(loss)/d(logits) for an upstream scalar gradient gscale."""
    d = probs * (gscale / n_kept)
    safe = np.where(kept, labels, 0)
    rows = np.arange(labels.shape[0])
    d[rows, safe] -= np.where(kept, gscale / n_kept, 0.0)
    d[~kept] = 0.0
    return d


def levenshtein(a, b):
    """Unit-cost edit distance between two int64 id sequences."""
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = np.arange(lb + 1, dtype=np.int64)
    cur = np.empty(lb + 1, dtype=np.int64)
    for i in range(1, la + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, lb + 1):
            sub = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev, cur = cur, prev
    return int(prev[lb])
