"""FPFH histograms and their multi-scale concatenation.

Neighbourhoods are defined by neighbour *count*, not radius. Each of the
three pair angles is binned into 11 equal-width bins over its full range and
every 11-bin block of a point's SPFH is normalised to sum to 100.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import warnings

from numba import NumbaWarning, njit, prange

from pcdefect.core.cloud import PointCloud
from pcdefect.core.knn import KnnIndex
from pcdefect.errors import ChecksumError, DegeneratePair, InvalidCloud, ParseError

warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)

BINS = 11
DIM = 3 * BINS
DEFAULT_SCALES = (40, 80, 120)
_EPS = 1e-12
_MAX_WEIGHT = 1e12


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    rows: np.ndarray
    scales: tuple = field(default=())

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


@njit(cache=True)
def _lex_le(a, b):
    for c in range(3):
        if a[c] < b[c]:
            return True
        if a[c] > b[c]:
            return False
    return True


@njit(cache=True)
def _pair(pi, ni, pj, nj):
    """Return ``(alpha, phi, theta, valid)`` for one oriented point pair."""
    d0, d1, d2 = pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]
    dist = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    if dist < _EPS:
        return 0.0, 0.0, 0.0, False
    d0, d1, d2 = d0 / dist, d1 / dist, d2 / dist
    ai = abs(ni[0] * d0 + ni[1] * d1 + ni[2] * d2)
    aj = abs(nj[0] * d0 + nj[1] * d1 + nj[2] * d2)
    if ai > aj or (ai == aj and _lex_le(pi, pj)):
        u0, u1, u2 = ni[0], ni[1], ni[2]
        m0, m1, m2 = nj[0], nj[1], nj[2]
    else:
        u0, u1, u2 = nj[0], nj[1], nj[2]
        m0, m1, m2 = ni[0], ni[1], ni[2]
        d0, d1, d2 = -d0, -d1, -d2
    v0 = u1 * d2 - u2 * d1
    v1 = u2 * d0 - u0 * d2
    v2 = u0 * d1 - u1 * d0
    vn = np.sqrt(v0 * v0 + v1 * v1 + v2 * v2)
    if vn < _EPS:
        # line parallel to the normal: orthogonal unit vector with largest |x|
        v0, v1, v2 = 1.0 - u0 * u0, -u0 * u1, -u0 * u2
        vn = np.sqrt(v0 * v0 + v1 * v1 + v2 * v2)
        if vn < _EPS:
            v0, v1, v2 = -u1 * u0, 1.0 - u1 * u1, -u1 * u2
            vn = np.sqrt(v0 * v0 + v1 * v1 + v2 * v2)
    v0, v1, v2 = v0 / vn, v1 / vn, v2 / vn
    w0 = u1 * v2 - u2 * v1
    w1 = u2 * v0 - u0 * v2
    w2 = u0 * v1 - u1 * v0
    alpha = min(1.0, max(-1.0, v0 * m0 + v1 * m1 + v2 * m2))
    phi = min(1.0, max(-1.0, u0 * d0 + u1 * d1 + u2 * d2))
    theta = np.arctan2(w0 * m0 + w1 * m1 + w2 * m2, u0 * m0 + u1 * m1 + u2 * m2)
    if theta == -np.pi:
        theta = np.pi
    return alpha, phi, theta, True


@njit(cache=True)
def _bin(x, lo, hi):
    b = int(np.floor((x - lo) * (BINS / (hi - lo))))
    if b < 0:
        return 0
    if b > BINS - 1:
        return BINS - 1
    return b


@njit(cache=True, parallel=True)
def _spfh_kernel(points, normals, neighbors, k):
    n = neighbors.shape[0]
    hist = np.zeros((n, DIM))
    for i in prange(n):
        count = 0
        for c in range(k):
            j = neighbors[i, c]
            a, f, t, ok = _pair(points[i], normals[i], points[j], normals[j])
            if not ok:
                continue
            count += 1
            hist[i, _bin(a, -1.0, 1.0)] += 1.0
            hist[i, BINS + _bin(f, -1.0, 1.0)] += 1.0
            hist[i, 2 * BINS + _bin(t, -np.pi, np.pi)] += 1.0
        if count > 0:
            scale = 100.0 / count
            for b in range(DIM):
                hist[i, b] *= scale
    return hist


@njit(cache=True, parallel=True)
def _spfh_multi_kernel(points, normals, neighbors, scales):
    # one pass over the widest neighbourhood; histograms snapshot at each scale
    n = neighbors.shape[0]
    m = scales.shape[0]
    out = np.zeros((m, n, DIM))
    for i in prange(n):
        acc = np.zeros(DIM)
        count = 0
        c = 0
        for s in range(m):
            while c < scales[s]:
                j = neighbors[i, c]
                a, f, t, ok = _pair(points[i], normals[i], points[j], normals[j])
                c += 1
                if not ok:
                    continue
                count += 1
                acc[_bin(a, -1.0, 1.0)] += 1.0
                acc[BINS + _bin(f, -1.0, 1.0)] += 1.0
                acc[2 * BINS + _bin(t, -np.pi, np.pi)] += 1.0
            if count > 0:
                scale = 100.0 / count
                for b in range(DIM):
                    out[s, i, b] = acc[b] * scale
    return out


@njit(cache=True, parallel=True)
def _fpfh_kernel(points, spfh_rows, neighbors, k):
    n = neighbors.shape[0]
    out = spfh_rows.copy()
    for i in prange(n):
        for c in range(k):
            j = neighbors[i, c]
            d0 = points[j, 0] - points[i, 0]
            d1 = points[j, 1] - points[i, 1]
            d2 = points[j, 2] - points[i, 2]
            omega = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            w = _MAX_WEIGHT if omega < _EPS else min(1.0 / omega, _MAX_WEIGHT)
            w /= k
            for b in range(DIM):
                out[i, b] += w * spfh_rows[j, b]
    return out


def pair_features(p_i, n_i, p_j, n_j):
    """Darboux-frame angles ``(alpha, phi, theta)`` of one oriented point pair.

    The frame's source is the point whose normal is closer to parallel with
    the connecting line (lexicographically smaller point on exact ties), so
    the triple is symmetric in its two arguments.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64).reshape(3) for a in (p_i, n_i, p_j, n_j)]
    a, f, t, ok = _pair(*args)
    if not ok:
        raise DegeneratePair("coincident points")
    return a, f, t


def _table(neighbors, k):
    return np.ascontiguousarray(neighbors[:, :k], dtype=np.int64)


def spfh_from_table(points, normals, neighbors) -> np.ndarray:
    """SPFH rows for every point given a self-free ``(n, k)`` neighbour table."""
    k = neighbors.shape[1]
    return _spfh_kernel(np.ascontiguousarray(points, dtype=np.float64),
                        np.ascontiguousarray(normals, dtype=np.float64), _table(neighbors, k), k)


def fpfh_from_table(points, normals, neighbors) -> np.ndarray:
    """FPFH rows from a self-free neighbour table of shape ``(n, k)``."""
    k = neighbors.shape[1]
    pts = np.ascontiguousarray(points, dtype=np.float64)
    s = spfh_from_table(pts, normals, neighbors)
    if k == 0:
        return s
    return _fpfh_kernel(pts, s, _table(neighbors, k), k)


def _self_free(neighbors, k):
    rows = np.arange(neighbors.shape[0])[:, None]
    order = np.argsort(neighbors == rows, axis=1, kind="stable")
    return np.take_along_axis(neighbors, order, axis=1)[:, :k]


def neighbor_table(points, k, index=None):
    """Self-free ``(n, k)`` table of each point's nearest neighbours."""
    index = index if index is not None else KnnIndex(points)
    nbrs, _ = index.query(points, k + 1)
    return _self_free(nbrs, k)


def spfh(cloud: PointCloud, normals, index: KnnIndex, i: int, k: int) -> np.ndarray:
    """SPFH of point ``i`` over its ``k`` nearest neighbours (self excluded)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    normals = cloud.normals if normals is None else np.asarray(normals, dtype=np.float64)
    k = min(int(k), cloud.n - 1)
    nbrs, _ = index.query(cloud.points[i:i + 1], k + 1)
    nbrs = nbrs[0][nbrs[0] != i][:k]
    local_pts = np.vstack([cloud.points[i:i + 1], cloud.points[nbrs]])
    local_nrm = np.vstack([normals[i:i + 1], normals[nbrs]])
    table = np.zeros((1, k), dtype=np.int64)
    table[0] = np.arange(1, k + 1)
    return spfh_from_table(local_pts, local_nrm, table)[0]


def _check(cloud, normals):
    normals = cloud.normals if normals is None else np.asarray(normals, dtype=np.float64)
    if normals is None:
        raise InvalidCloud("descriptors need normals")
    if normals.shape != cloud.points.shape:
        raise InvalidCloud("normals not aligned with points")
    return normals


def fpfh(cloud: PointCloud, normals=None, k: int = 40, index: KnnIndex | None = None) -> FeatureMatrix:
    normals = _check(cloud, normals)
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(int(k), cloud.n - 1)
    table = neighbor_table(cloud.points, k, index)
    return FeatureMatrix(fpfh_from_table(cloud.points, normals, table), (k,))


def multiscale_fpfh(
    cloud: PointCloud,
    normals=None,
    scales: Sequence[int] = DEFAULT_SCALES,
    index: KnnIndex | None = None,
    neighbors: np.ndarray | None = None,
) -> FeatureMatrix:
    """Concatenated FPFH at each neighbour count; row ``i`` describes point ``i``.

    ``neighbors`` may supply a precomputed self-free table with at least
    ``max(scales)`` columns (clamped to ``n - 1``).
    """
    normals = _check(cloud, normals)
    scales = [int(s) for s in scales]
    if not scales:
        raise ValueError("at least one scale is required")
    if any(b < a for a, b in zip(scales, scales[1:])) or scales[0] < 1:
        raise ValueError("scales must be positive and ascending")
    eff = [min(s, cloud.n - 1) for s in scales]
    if neighbors is None:
        neighbors = neighbor_table(cloud.points, max(eff), index)
    pts = np.ascontiguousarray(cloud.points)
    table = _table(neighbors, max(eff))
    spfh_rows = _spfh_multi_kernel(pts, np.ascontiguousarray(normals), table, np.asarray(eff, dtype=np.int64))
    blocks = [_fpfh_kernel(pts, spfh_rows[s], table, k) if k > 0 else spfh_rows[s] for s, k in enumerate(eff)]
    return FeatureMatrix(np.concatenate(blocks, axis=1), tuple(scales))


def save_features(features: FeatureMatrix, path, source: str = "") -> None:
    """Flat float32 rows behind an 8-byte ``(n, dim)`` header, plus a JSON sidecar."""
    path = Path(path)
    rows = np.ascontiguousarray(features.rows, dtype="<f4")
    payload = np.array(rows.shape, dtype="<u4").tobytes() + rows.tobytes()
    path.write_bytes(payload)
    meta = {"scales": list(features.scales), "source": source, "sha256": hashlib.sha256(payload).hexdigest()}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_features(path) -> FeatureMatrix:
    path = Path(path)
    payload = path.read_bytes()
    if len(payload) < 8:
        raise ParseError("feature file shorter than its header", offset=len(payload))
    n, dim = (int(x) for x in np.frombuffer(payload[:8], dtype="<u4"))
    if len(payload) != 8 + 4 * n * dim:
        raise ParseError(f"expected {n}x{dim} float32 rows", offset=len(payload))
    meta_path = path.with_suffix(path.suffix + ".json")
    scales: tuple = ()
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("sha256") not in (None, hashlib.sha256(payload).hexdigest()):
            raise ChecksumError(f"checksum mismatch for {path}")
        scales = tuple(meta.get("scales", ()))
    rows = np.frombuffer(payload[8:], dtype="<f4").reshape(n, dim).astype(np.float64)
    return FeatureMatrix(rows, scales)
