"""NumPy implementations of the hot kernels.

Reference semantics for :mod:`foresthash._ckernels`; both expose identical
signatures and must return identical arrays.
"""

import numpy as np


def traverse(go_right, depth, num_trees):
    """Walk ``num_trees`` complete trees given per-node branch decisions.

    ``go_right`` is ``(N, num_trees * internal)`` uint8 with tree ``t``'s
    internal node ``h`` at column ``t * internal + h``.  Returns leaf ids
    ``(N, num_trees)`` as int32.
    """
    go_right = np.asarray(go_right, dtype=np.uint8)
    internal = 2 ** (depth - 1) - 1
    n = go_right.shape[0]
    rows = np.arange(n)
    leaves = np.empty((n, num_trees), dtype=np.int32)
    for t in range(num_trees):
        h = np.zeros(n, dtype=np.int64)
        base = t * internal
        for _ in range(depth - 1):
            h = 2 * h + 1 + go_right[rows, base + h]
        leaves[:, t] = h - internal
    return leaves


def hamming_distances(db_words, q_words):
    """Hamming distance of every packed database row to one packed query."""
    x = np.bitwise_xor(np.asarray(db_words, dtype=np.uint64), np.asarray(q_words, dtype=np.uint64))
    return np.bitwise_count(x).sum(axis=1, dtype=np.int32)


def radius_query(db_words, q_words, radius):
    """Ascending indices of database rows within ``radius`` of the query."""
    return np.flatnonzero(hamming_distances(db_words, q_words) <= radius).astype(np.int64)


def joint_counts(x, y, x_arity, y_arity):
    """Contingency table ``(x_arity, y_arity)`` of two integer vectors."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    if x.size and (x.min() < 0 or x.max() >= x_arity or y.min() < 0 or y.max() >= y_arity):
        raise ValueError("value out of range")
    flat = np.bincount(x * y_arity + y, minlength=x_arity * y_arity)
    return flat.reshape(x_arity, y_arity).astype(np.int64)


def pairwise_joint_counts(values, arity):
    """All pairwise contingency tables of the columns of ``values`` ``(N, M)``.

    Returns ``(M, M, arity, arity)`` int64 with entry ``[i, j]`` the table of
    column ``i`` against column ``j``.
    """
    values = np.asarray(values, dtype=np.int64)
    m = values.shape[1]
    if values.size and (values.min() < 0 or values.max() >= arity):
        raise ValueError("value out of range")
    out = np.zeros((m, m, arity, arity), dtype=np.int64)
    for i in range(m):
        for j in range(i, m):
            out[i, j] = joint_counts(values[:, i], values[:, j], arity, arity)
            out[j, i] = out[i, j].T
    return out
