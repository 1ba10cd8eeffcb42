"""Independent reference implementations the tests check the package against.

Everything here is deliberately naive: exact LP solves, exhaustive path
enumeration, brute-force segmentation search, and symmetric finite
differences. None of it shares code with the package.
"""

import itertools

import numpy as np
from scipy.optimize import linprog


def random_simplex(rng, k):
    """Strictly positive probability vector of length k."""
    v = rng.random(k) + 0.05
    return v / v.sum()


def squared_index_cost(n, m):
    i = np.arange(n, dtype=np.float64)[:, None]
    j = np.arange(m, dtype=np.float64)[None, :]
    return (i - j) ** 2


def lp_transport(alpha, beta, cost):
    """Exact optimal transport objective via linear programming.

    Minimizes sum(gamma * cost) over all couplings with marginals
    (alpha, beta). Returns (gamma, objective).
    """
    n, m = cost.shape
    # equality constraints: n row sums then m column sums
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([alpha, beta])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * (n * m), method="highs")
    assert res.success, res.message
    return res.x.reshape(n, m), res.fun


def ctc_enumerate(probs, targets, blank=0):
    """-log P(targets) by brute force over every length-n label path.

    A path contributes when merging repeats and then deleting blanks
    yields exactly the target sequence.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    targets = list(targets)
    total = 0.0
    for path in itertools.product(range(k), repeat=n):
        merged = [sym for idx, sym in enumerate(path)
                  if idx == 0 or sym != path[idx - 1]]
        if [s for s in merged if s != blank] == targets:
            p = 1.0
            for t, sym in enumerate(path):
                p *= probs[t, sym]
            total += p
    if total <= 0.0:
        return np.inf
    return -np.log(total)


def best_segmentation(logp_cols):
    """Best split of n frames into m contiguous non-empty runs.

    logp_cols is n x m; run j scores the sum of its column-j entries.
    Enumerates every choice of m-1 cut points.
    """
    n, m = logp_cols.shape
    if m > n:
        return -np.inf
    best = -np.inf
    for cuts in itertools.combinations(range(1, n), m - 1):
        bounds = (0,) + cuts + (n,)
        score = 0.0
        for j in range(m):
            score += logp_cols[bounds[j]:bounds[j + 1], j].sum()
        best = max(best, score)
    return best


def central_diff(f, x, h=1e-5):
    """Coordinate-wise symmetric finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    out = grad.ravel()
    for idx in range(flat.size):
        keep = flat[idx]
        flat[idx] = keep + h
        up = f(x)
        flat[idx] = keep - h
        down = f(x)
        flat[idx] = keep
        out[idx] = (up - down) / (2.0 * h)
    return grad


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(numeric).max(), 1e-10)
    return np.abs(analytic - numeric).max() / scale
