"""Exact brute-force Euclidean neighbor search with deterministic tie-breaking."""
from __future__ import annotations

import numpy as np

_CHUNK_ELEMS = 1 << 24


def pairwise_sq(A, B):
    """Squared Euclidean distances computed from explicit differences (exact zeros for duplicates)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    out = np.empty((len(A), len(B)))
    step = max(1, _CHUNK_ELEMS // max(1, len(B) * A.shape[1]))
    for s in range(0, len(A), step):
        diff = A[s:s + step, None, :] - B[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def knn(Z, k: int):
    """k nearest neighbours of every row, self excluded.

    Returns ``(idx, dist)`` each of shape ``(n, k)``, ordered by ascending
    distance with ties going to the lower row index.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = len(Z)
    if not 0 < k < n:
        raise ValueError(f"k={k} needs 0 < k < n={n}")
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    step = max(1, _CHUNK_ELEMS // max(1, n * Z.shape[1]))
    for s in range(0, n, step):
        D = pairwise_sq(Z[s:s + step], Z)
        rows = np.arange(D.shape[0])
        D[rows, s + rows] = np.inf
        kth = np.partition(D, k - 1, axis=1)[:, k - 1]
        for r in range(D.shape[0]):
            cand = np.flatnonzero(D[r] <= kth[r])
            order = np.lexsort((cand, D[r, cand]))[:k]
            idx[s + r] = cand[order]
            dist[s + r] = np.sqrt(D[r, cand[order]])
    return idx, dist
