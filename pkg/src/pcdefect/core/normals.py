from __future__ import annotations

import numpy as np

from pcdefect.core.cloud import PointCloud
from pcdefect.core.knn import KnnIndex
from pcdefect.errors import DegenerateNeighborhood, InvalidCloud

_CHUNK = 65536


def _orient(normals, points, centroid):
    dots = np.einsum("nd,nd->n", normals, points - centroid)
    sign = np.sign(dots)
    # dot exactly zero: first nonzero of (z, y, x) must be positive
    zero = sign == 0
    if np.any(zero):
        sub = normals[zero]
        fallback = np.ones(sub.shape[0])
        decided = np.zeros(sub.shape[0], dtype=bool)
        for axis in (2, 1, 0):
            comp = sub[:, axis]
            pick = ~decided & (comp != 0)
            fallback[pick] = np.sign(comp[pick])
            decided |= pick
        sign[zero] = fallback
    return normals * sign[:, None]


def normals_from_neighbors(points: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Smallest-eigenvector normals from a precomputed ``(n, k)`` neighbour table."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    out = np.empty((n, 3))
    for start in range(0, n, _CHUNK):
        nb = points[neighbors[start:start + _CHUNK]]
        centered = nb - nb.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", centered, centered)
        if np.any(np.einsum("nii->n", cov) == 0.0):
            bad = start + int(np.nonzero(np.einsum("nii->n", cov) == 0.0)[0][0])
            raise DegenerateNeighborhood(f"neighbours of point {bad} are all coincident")
        _, vecs = np.linalg.eigh(cov)
        out[start:start + _CHUNK] = vecs[:, :, 0]
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return _orient(out, points, points.mean(axis=0))


def estimate_normals(cloud: PointCloud, k: int, index: KnnIndex | None = None) -> PointCloud:
    """PCA normals over each point's ``k`` nearest neighbours (self included).

    Orientation points away from the cloud centroid.
    """
    if cloud.n < 3:
        raise InvalidCloud("normal estimation needs at least 3 points")
    if k < 3:
        raise ValueError("k must be >= 3")
    index = index if index is not None else KnnIndex(cloud.points)
    nbrs, _ = index.query(cloud.points, min(k, cloud.n))
    return cloud.with_normals(normals_from_neighbors(cloud.points, nbrs))
