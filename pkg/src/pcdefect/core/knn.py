"""Exact k-nearest-neighbour search with index tie-breaking.

Candidates come from a kd-tree, then every returned distance is recomputed
as ``sqrt(sum((p - q)**2))`` and rows are ordered by (distance, index). Rows
whose k-th and (k+1)-th candidates are (near-)tied are resolved by an exact
ball query, so the result never depends on the tree's internal ordering.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from pcdefect.core.cloud import PointCloud

_TIE_RTOL = 1e-9


def _distances(points, idx, queries):
    diff = points[idx] - queries[:, None, :]
    return np.sqrt(np.einsum("mkd,mkd->mk", diff, diff))


@njit(cache=True)
def _canonical_sort(points, idx, queries):
    # rows arrive nearly sorted from the tree, so insertion sort is ~linear
    m, k = idx.shape
    dist = np.empty((m, k))
    for r in range(m):
        for c in range(k):
            j = idx[r, c]
            d0 = points[j, 0] - queries[r, 0]
            d1 = points[j, 1] - queries[r, 1]
            d2 = points[j, 2] - queries[r, 2]
            dist[r, c] = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        for c in range(1, k):
            dv = dist[r, c]
            iv = idx[r, c]
            p = c - 1
            while p >= 0 and (dist[r, p] > dv or (dist[r, p] == dv and idx[r, p] > iv)):
                dist[r, p + 1] = dist[r, p]
                idx[r, p + 1] = idx[r, p]
                p -= 1
            dist[r, p + 1] = dv
            idx[r, p + 1] = iv
    return idx, dist


class KnnIndex:
    """Immutable spatial index over a cloud's points; safe for concurrent reads."""

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64, copy=True)
        pts.setflags(write=False)
        self._points = pts
        self._tree = cKDTree(pts)

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n(self) -> int:
        return self._points.shape[0]

    def query(self, queries, k: int, workers: int = 1):
        """Return ``(indices, distances)`` of shape ``(m, min(k, n))``."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if k < 1:
            raise ValueError("k must be >= 1")
        k = min(int(k), self.n)
        kk = min(k + 1, self.n)
        _, idx = self._tree.query(q, k=kk, workers=workers)
        idx = np.ascontiguousarray(np.asarray(idx, dtype=np.int64).reshape(q.shape[0], kk))
        idx, dist = _canonical_sort(self._points, idx, np.ascontiguousarray(q))
        if kk > k:
            kth = dist[:, k - 1]
            risky = np.nonzero(dist[:, k] <= kth * (1 + _TIE_RTOL) + 1e-300)[0]
            for row in risky:
                idx_row, dist_row = self._exact_row(q[row], kth[row] * (1 + 2 * _TIE_RTOL) + 1e-300)
                idx[row, :k] = idx_row[:k]
                dist[row, :k] = dist_row[:k]
            idx, dist = idx[:, :k], dist[:, :k]
        return idx, dist

    def _exact_row(self, query, radius):
        cand = np.asarray(self._tree.query_ball_point(query, radius), dtype=np.int64)
        d = _distances(self._points, cand[None, :], query[None, :])[0]
        order = np.lexsort((cand, d))
        return cand[order], d[order]

    def query_radius(self, queries, radius: float, strict: bool = True):
        """Indices within ``radius`` of any query, with the per-point min distance."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        hits = self._tree.query_ball_point(q, radius * (1 + _TIE_RTOL), return_sorted=False)
        cand = np.unique(np.concatenate([np.asarray(h, dtype=np.int64) for h in hits] + [np.empty(0, np.int64)]))
        if cand.size == 0:
            return cand, np.empty(0)
        kq = min(2, q.shape[0])
        _, j = cKDTree(q).query(self._points[cand], k=kq)
        j = np.asarray(j, dtype=np.int64).reshape(cand.size, kq)
        d = _distances(q, j, self._points[cand]).min(axis=1)
        keep = d < radius if strict else d <= radius
        return cand[keep], d[keep]


def build_knn_index(cloud: PointCloud) -> KnnIndex:
    return KnnIndex(cloud.points)


def knn_query(index: KnnIndex, query, k: int):
    """k nearest points to a single 3-vector as ``[(index, distance), ...]``."""
    idx, dist = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]
