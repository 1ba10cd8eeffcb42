"""Pure numpy implementations of the hot inner kernels.

Each function here has a compiled twin in ``_fast``; the package picks
one backend at import time. The twins share the same arithmetic order,
so the coupling and segmentation kernels agree bit for bit; the CTC
kernel goes through exp/log, where numpy's vectorized routines and
libm may round the last bit differently, so its twins agree to a few
ulps rather than exactly.
"""

from __future__ import annotations

import numpy as np

NEG_INF = float("-inf")


def _lse3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Elementwise log(exp(a)+exp(b)+exp(c)) that tolerates -inf entries."""
    m = np.maximum(np.maximum(a, b), c)
    out = np.full_like(m, NEG_INF)
    ok = m > NEG_INF
    if np.any(ok):
        mm = m[ok]
        s = np.exp(a[ok] - mm) + np.exp(b[ok] - mm) + np.exp(c[ok] - mm)
        out[ok] = mm + np.log(s)
    return out


def _shift(row: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(row, NEG_INF)
    if k < row.shape[0]:
        out[k:] = row[: row.shape[0] - k]
    return out


def ctc_forward_backward(logp: np.ndarray, targets: np.ndarray, blank: int):
    """CTC negative log-likelihood and its gradient w.r.t. log-probabilities.

    logp: (n, K) per-frame log-probabilities. targets: (m,) label ids,
    none equal to blank. Returns (loss, grad) with grad shaped like logp.
    An infeasible target (too few frames) yields loss=+inf and zero grad.
    """
    logp = np.asarray(logp, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n = logp.shape[0]
    m = targets.shape[0]
    S = 2 * m + 1
    z = np.full(S, blank, dtype=np.int64)
    z[1::2] = targets

    # skip transition s-2 -> s is legal only for non-blank states whose
    # label differs from the state two back
    allow_skip = np.zeros(S, dtype=bool)
    if S > 2:
        allow_skip[2:] = (z[2:] != blank) & (z[2:] != z[:-2])

    a = np.full((n, S), NEG_INF)
    a[0, 0] = logp[0, z[0]]
    if S > 1:
        a[0, 1] = logp[0, z[1]]
    neg = np.full(S, NEG_INF)
    for t in range(1, n):
        prev = a[t - 1]
        skip = np.where(allow_skip, _shift(prev, 2), neg)
        a[t] = logp[t, z] + _lse3(prev, _shift(prev, 1), skip)

    tail = a[n - 1, S - 1]
    if S > 1:
        tail = _lse3(np.array(tail), np.array(a[n - 1, S - 2]), np.array(NEG_INF))
    log_total = float(tail)
    if not np.isfinite(log_total):
        return float("inf"), np.zeros_like(logp)

    b = np.full((n, S), NEG_INF)
    b[n - 1, S - 1] = logp[n - 1, z[S - 1]]
    if S > 1:
        b[n - 1, S - 2] = logp[n - 1, z[S - 2]]
    # skip legality viewed from the source state: s -> s+2 allowed iff
    # allow_skip[s+2]
    skip_from = np.zeros(S, dtype=bool)
    if S > 2:
        skip_from[:-2] = allow_skip[2:]
    for t in range(n - 2, -1, -1):
        nxt = b[t + 1]
        stay = nxt
        right = np.full(S, NEG_INF)
        right[:-1] = nxt[1:]
        skip = np.full(S, NEG_INF)
        if S > 2:
            skip[:-2] = nxt[2:]
        skip = np.where(skip_from, skip, neg)
        b[t] = logp[t, z] + _lse3(stay, right, skip)

    # occupancy: a and b both include the frame-t emission, so divide it
    # out once, then normalize by the total
    post = a + b - logp[:, z] - log_total
    grad = np.zeros_like(logp)
    occ = np.exp(post)
    for t in range(n):
        np.add.at(grad[t], z, -occ[t])
    return -log_total, grad


def nw_coupling(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Monotone transport plan between two 1D mass vectors.

    Closed form of the north-west-corner construction on prefix sums:
    gamma[i, j] = max(0, min(A[i+1], B[j+1]) - max(A[i], B[j])).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    A = np.concatenate(([0.0], np.cumsum(alpha)))
    B = np.concatenate(([0.0], np.cumsum(beta)))
    lo = np.maximum(A[:-1, None], B[None, :-1])
    hi = np.minimum(A[1:, None], B[None, 1:])
    return np.maximum(0.0, hi - lo)


def seg_dp_extend(prev_row: np.ndarray, logcol: np.ndarray) -> np.ndarray:
    """Extend a monotone-segmentation DP row by one target token.

    prev_row[t] is the best score of covering the first t frames with the
    tokens so far; logcol[t] the new token's log-probability at frame t+1.
    Returns the row for one more token, where that token covers a
    non-empty suffix of the consumed frames:

        new[t] = max_{s<=t} prev[s-1] + sum_{u=s..t} logcol[u-1]

    computed as a prefix-sum plus running max so extension is O(n).
    """
    prev_row = np.asarray(prev_row, dtype=np.float64)
    logcol = np.asarray(logcol, dtype=np.float64)
    n = logcol.shape[0]
    C = np.concatenate(([0.0], np.cumsum(logcol)))
    run = np.maximum.accumulate(prev_row[:-1] - C[:-1])
    new_row = np.empty(n + 1)
    new_row[0] = NEG_INF
    new_row[1:] = C[1:] + run
    return new_row
