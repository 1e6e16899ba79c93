"""Reference computations used only by the tests.

Everything here is deliberately naive: dense linear solves on explicitly
enumerated state spaces, with no reuse of the package's recursions.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import null_space


def boundary_moves(params, i, j):
    """Outgoing transitions ((i', j'), rate) from a state with i < s."""
    s, lam, mf, ms = params.s, params.lam, params.mu_fast, params.mu_slow
    assert i < s
    moves = [((i + 1, j + 1), lam)]
    if i - j > 0:
        moves.append(((i - 1, j), (i - j) * ms))
    if j > 0:
        moves.append(((i - 1, j - 1), j * mf))
    return moves


def _absorption(params, transient, absorbing_of):
    """Absorption probabilities: transient list, absorbing_of(src, dst) -> label or None."""
    index = {st: n for n, st in enumerate(transient)}
    n = len(transient)
    A = np.zeros((n, n))
    labels = {}
    b_cols = []
    rows = []
    for st in transient:
        out = 0.0
        for dst, rate in boundary_moves(params, *st):
            out += rate
            label = absorbing_of(st, dst)
            if label is not None:
                if label not in labels:
                    labels[label] = len(labels)
                rows.append((index[st], labels[label], rate))
            else:
                A[index[st], index[dst]] += rate
        A[index[st], index[st]] -= out
    B = np.zeros((n, len(labels)))
    for r, c, rate in rows:
        B[r, c] += rate
    X = np.linalg.solve(-A, B)
    return index, labels, X


def theta_oracle(params, k, i, j):
    """P(phase j+1 is first entered at (i+1-k, j+1) | start (i, j))."""
    a_max = i - j
    transient = [(jj + a, jj) for jj in range(j + 1) for a in range(a_max + 1)]

    def absorbing(src, dst):
        return dst[0] if dst[1] == j + 1 else None

    index, labels, X = _absorption(params, transient, absorbing)
    target = i + 1 - k
    if target not in labels:
        return 0.0
    return float(X[index[(i, j)], labels[target]])


def psi_oracle(params, k, l, i, j):
    """P(level k is first entered at (k, l) | start (i, j)), i < k <= s."""
    transient = [(ii, jj) for ii in range(k) for jj in range(ii + 1)]

    def absorbing(src, dst):
        return dst[1] if dst[0] == k else None

    index, labels, X = _absorption(params, transient, absorbing)
    if l not in labels:
        return 0.0
    return float(X[index[(i, j)], labels[l]])


def svd_null_vector(Q):
    """Left null vector of a generator by SVD, normalized to sum one."""
    v = null_space(Q.T)[:, 0]
    return v / v.sum()


def mms_cdf(marginal):
    return np.cumsum(marginal)
