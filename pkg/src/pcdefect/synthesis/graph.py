from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from pcdefect.core.cloud import PointCloud
from pcdefect.core.knn import KnnIndex
from pcdefect.errors import InvalidCloud, Unreachable


@dataclass(frozen=True, eq=False)
class KnnGraph:
    """Undirected union-of-kNN graph in CSR form with Euclidean weights."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    k_graph: int
    _lists: list = field(default=None, repr=False, compare=False)

    def neighbors(self, i: int):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def adjacency_lists(self):
        """Per-vertex python lists of (neighbour, weight); built lazily once."""
        if self._lists is None:
            ind = self.indices.tolist()
            w = self.weights.tolist()
            ptr = self.indptr.tolist()
            lists = [list(zip(ind[ptr[i]:ptr[i + 1]], w[ptr[i]:ptr[i + 1]])) for i in range(self.n)]
            object.__setattr__(self, "_lists", lists)
        return self._lists


@dataclass(frozen=True)
class GeodesicPath:
    start: int
    end: int
    vertices: tuple
    length: float

    def __len__(self):
        return len(self.vertices)


def exclude_self(neighbors: np.ndarray, k: int) -> np.ndarray:
    """Drop each row's own index from an ``(n, >=k+1)`` table, keep ``k`` columns."""
    rows = np.arange(neighbors.shape[0])[:, None]
    is_self = neighbors == rows
    order = np.argsort(is_self, axis=1, kind="stable")
    return np.take_along_axis(neighbors, order, axis=1)[:, :k]


def build_graph(cloud: PointCloud, k_graph: int = 8, index: KnnIndex | None = None) -> KnnGraph:
    n = cloud.n
    if n < 2:
        raise InvalidCloud("a graph needs at least 2 points")
    if k_graph < 1:
        raise ValueError("k_graph must be >= 1")
    k = min(int(k_graph), n - 1)
    index = index if index is not None else KnnIndex(cloud.points)
    nbrs, _ = index.query(cloud.points, k + 1)
    nbrs = exclude_self(nbrs, k)
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = nbrs.reshape(-1)
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    pairs = np.unique(lo * n + hi)
    lo, hi = pairs // n, pairs % n
    diff = cloud.points[hi] - cloud.points[lo]
    w = np.sqrt(np.einsum("ed,ed->e", diff, diff))
    a = np.concatenate([lo, hi])
    b = np.concatenate([hi, lo])
    ww = np.concatenate([w, w])
    order = np.lexsort((b, a))
    a, b, ww = a[order], b[order], ww[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=n), out=indptr[1:])
    for arr in (indptr, b, ww):
        arr.setflags(write=False)
    return KnnGraph(n, indptr, b, ww, k)


def dijkstra(graph: KnnGraph, source: int, limit: float = math.inf, target: int | None = None):
    """Single-source shortest paths; equal tentative distances pop the lower vertex.

    Vertices farther than ``limit`` are left unsettled (distance ``inf``).
    Returns ``(dist, pred)`` as numpy arrays; ``pred`` is -1 for the source and
    unreached vertices.
    """
    adj = graph.adjacency_lists()
    n = graph.n
    dist = [math.inf] * n
    pred = [-1] * n
    done = [False] * n
    dist[source] = 0.0
    heap = [(0.0, source)]
    settled = [math.inf] * n
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        if d > limit:
            break
        done[u] = True
        settled[u] = d
        if u == target:
            break
        for v, w in adj[u]:
            if done[v]:
                continue
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return np.asarray(settled), np.asarray(pred, dtype=np.int64)


def trace_path(pred: np.ndarray, source: int, end: int) -> list:
    path = [end]
    while path[-1] != source:
        p = int(pred[path[-1]])
        if p < 0:
            raise Unreachable(f"vertex {end} is not reachable from {source}")
        path.append(p)
    return path[::-1]


def path_length(graph: KnnGraph, vertices) -> float:
    total = 0.0
    for a, b in zip(vertices[:-1], vertices[1:]):
        nb, w = graph.neighbors(a)
        hit = np.nonzero(nb == b)[0]
        if hit.size == 0:
            raise ValueError(f"vertices {a} and {b} are not adjacent")
        total += float(w[hit[0]])
    return total


def geodesic_path(graph: KnnGraph, cloud: PointCloud | None, s: int, e: int) -> GeodesicPath:
    """Shortest path from ``s`` to ``e`` by summed Euclidean edge weights."""
    n = graph.n
    if not (0 <= s < n and 0 <= e < n):
        raise IndexError(f"anchor indices ({s}, {e}) outside [0, {n})")
    if s == e:
        return GeodesicPath(s, s, (s,), 0.0)
    dist, pred = dijkstra(graph, s, target=e)
    if not np.isfinite(dist[e]):
        raise Unreachable(f"vertex {e} is not in the component of {s}")
    verts = trace_path(pred, s, e)
    return GeodesicPath(s, e, tuple(verts), float(dist[e]))
