"""Reference implementations used only by the tests.

They are deliberately naive and written from the definitions, not from the
package code.
"""

import numpy as np


def toeplitz_matrix(seed, n, m):
    """Dense m x n matrix built from its first column and first row.

    First column (top-down) is seed[n-1 .. n+m-2]; first row (left-right) is
    seed[n-1], seed[n-2], ..., seed[0]; every other entry copies its
    upper-left neighbour.
    """
    seed = [int(b) for b in seed]
    assert len(seed) == n + m - 1
    T = [[0] * n for _ in range(m)]
    for i in range(m):
        T[i][0] = seed[n - 1 + i]
    for j in range(n):
        T[0][j] = seed[n - 1 - j]
    for i in range(1, m):
        for j in range(1, n):
            T[i][j] = T[i - 1][j - 1]
    return np.array(T, dtype=np.uint8)


def gf2_matvec(T, x):
    out = []
    for row in T:
        acc = 0
        for a, b in zip(row, x):
            acc ^= int(a) & int(b)
        out.append(acc)
    return np.array(out, dtype=np.uint8)


def gf2_matvec_batch(T, X):
    """Row-wise parity of T @ x for each row x of X (vectorized, same semantics)."""
    return ((X.astype(np.int64) @ T.T.astype(np.int64)) & 1).astype(np.uint8)


def toeplitz_matrices(seeds, n, m):
    """Batched :func:`toeplitz_matrix` for a (k, n+m-1) array of seeds, same construction."""
    seeds = np.asarray(seeds, dtype=np.uint8)
    assert seeds.shape[1] == n + m - 1
    T = np.zeros((len(seeds), m, n), dtype=np.uint8)
    T[:, :, 0] = seeds[:, n - 1:]
    T[:, 0, :] = seeds[:, n - 1::-1]
    for i in range(1, m):
        T[:, i, 1:] = T[:, i - 1, :-1]
    return T
