"""Exact k-nearest-neighbour tables over vertex coordinates.

Rows start with the vertex itself, then follow ascending Euclidean distance
with ties broken by ascending vertex index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NeighborTable:
    adjacent: np.ndarray  # [n, n_adj], column 0 is the vertex itself
    distant: np.ndarray  # [n, n_dis]

    @property
    def n_adj(self) -> int:
        return self.adjacent.shape[1]

    @property
    def n_dis(self) -> int:
        return self.distant.shape[1]

    def rows(self) -> np.ndarray:
        return np.concatenate([self.adjacent, self.distant], axis=1)


def knn(coords: np.ndarray, k: int, block: int = 1024) -> np.ndarray:
    """``[n, k]`` neighbour indices, self first.

    Candidates within the k-th smallest distance are found with a partial
    sort, then ordered exactly by ``(distance, index)``. ``block`` bounds the
    size of the distance matrix slab held in memory.
    """
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("coords must be [n, dims]")
    n = len(pts)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least {k} vertices for k-NN, got {n}")
    out = np.empty((n, k), dtype=np.int64)
    sq = np.sum(pts * pts, axis=1)
    for start in range(0, n, block):
        stop = min(start + block, n)
        rows = np.arange(start, stop)
        diff = pts[rows, None, :] - pts[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff) if pts.shape[1] <= 4 else sq[rows, None] + sq[None, :] - 2 * pts[rows] @ pts.T
        # self sorts first even when another vertex shares its coordinate
        d2[np.arange(stop - start), rows] = -1.0
        if k < n:
            kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
            r, c = np.nonzero(d2 <= kth[:, None])
        else:
            r, c = np.divmod(np.arange((stop - start) * n), n)
        order = np.lexsort((c, d2[r, c], r))
        r, c = r[order], c[order]
        first = np.searchsorted(r, np.arange(stop - start))
        pos = first[:, None] + np.arange(k)[None, :]
        out[start:stop] = c[pos]
    return out


def split_adjacent_distant(rows: np.ndarray, n_adj: int, n_dis: int) -> NeighborTable:
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] != n_adj + n_dis:
        raise ValueError(f"row length {rows.shape[-1]} != n_adj + n_dis = {n_adj + n_dis}")
    return NeighborTable(rows[:, :n_adj].copy(), rows[:, n_adj:].copy())

