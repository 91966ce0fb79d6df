"""Prototype-bank anomaly detection over aggregated multi-scale descriptors.

Per cloud: normals, multi-scale FPFH per point, then ``t`` sampled sites whose
features are the mean over their ``k_L`` nearest points. Normal clouds fill
the bank; a test site scores the Euclidean distance to its nearest bank row
and the object score is the maximum site score.

Site features are quantised to float32 both when stored and when scored, so
a training cloud re-scored with the fitting seed reproduces bank rows
bit-for-bit and scores exactly zero.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

from pcdefect.core.cloud import PointCloud
from pcdefect.core.knn import KnnIndex
from pcdefect.core.normals import normals_from_neighbors
from pcdefect.core.rng import Rng
from pcdefect.descriptor import DEFAULT_SCALES, DIM, FeatureMatrix, multiscale_fpfh
from pcdefect.errors import ChecksumError, DimMismatch, EmptyTrainingSet, ParseError, VersionMismatch

BANK_MAGIC = b"PCDBANK\x00"
BANK_VERSION = 1
_QUERY_CHUNK = 256


@dataclass(frozen=True)
class DetectorConfig:
    t: int = 4096
    k_l: int = 128
    scales: tuple = DEFAULT_SCALES
    seed: int = 0
    normal_k: int = 16
    sampling: str = "random"
    propagation: str = "nearest"

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if self.t < 1 or self.k_l < 1:
            raise ValueError("t and k_l must be >= 1")
        if not self.scales:
            raise ValueError("at least one scale is required")
        if self.normal_k < 3:
            raise ValueError("normal_k must be >= 3")
        if self.sampling not in ("random", "fps"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.propagation not in ("nearest", "idw"):
            raise ValueError(f"unknown propagation {self.propagation!r}")

    @property
    def dim(self) -> int:
        return DIM * len(self.scales)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class Description:
    """Per-cloud descriptor state reusable across site/aggregation settings."""

    cloud: PointCloud
    features: FeatureMatrix
    index: KnnIndex
    neighbors: np.ndarray  # (n, K) sorted kNN including self


def describe(cloud: PointCloud, config: DetectorConfig) -> Description:
    n = cloud.n
    width = min(n, max(max(config.scales) + 1, config.normal_k, config.k_l))
    index = KnnIndex(cloud.points)
    nbrs, _ = index.query(cloud.points, width)
    normals = normals_from_neighbors(cloud.points, nbrs[:, : min(config.normal_k, n)])
    rows = np.arange(n)[:, None]
    self_free = np.take_along_axis(nbrs, np.argsort(nbrs == rows, axis=1, kind="stable"), axis=1)[:, : width - 1]
    feats = multiscale_fpfh(cloud, normals, config.scales, neighbors=self_free)
    return Description(cloud.with_normals(normals), feats, index, nbrs)


def farthest_point_sample(points: np.ndarray, t: int, start: int) -> np.ndarray:
    n = points.shape[0]
    chosen = np.empty(t, dtype=np.int64)
    chosen[0] = start
    best = np.sqrt(((points - points[start]) ** 2).sum(axis=1))
    for i in range(1, t):
        nxt = int(np.argmax(best))
        chosen[i] = nxt
        best = np.minimum(best, np.sqrt(((points - points[nxt]) ** 2).sum(axis=1)))
    return chosen


def sample_sites(cloud: PointCloud, config: DetectorConfig) -> np.ndarray:
    """Site indices; a function of (seed, n, t) only, never of the geometry for random sampling."""
    n = cloud.n
    t = min(config.t, n)
    gen = Rng(config.seed).generator("sites", config.sampling, n, t)
    if config.sampling == "fps":
        return farthest_point_sample(cloud.points, t, int(gen.integers(n)))
    return gen.choice(n, size=t, replace=False).astype(np.int64)


def aggregate_neighborhoods(features, cloud: PointCloud, site_indices, k_l: int,
                            index: KnnIndex | None = None,
                            neighbors: np.ndarray | None = None) -> np.ndarray:
    """Mean feature row over each site's ``k_l`` nearest points, the site included."""
    rows = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    sites = np.asarray(site_indices, dtype=np.int64)
    k = min(int(k_l), cloud.n)
    if neighbors is not None and neighbors.shape[1] >= k:
        nb = neighbors[sites, :k]
    else:
        index = index if index is not None else KnnIndex(cloud.points)
        nb, _ = index.query(cloud.points[sites], k)
    out = np.empty((sites.size, rows.shape[1]))
    for start in range(0, sites.size, 1024):
        out[start:start + 1024] = rows[nb[start:start + 1024]].mean(axis=1)
    return out


@dataclass(frozen=True, eq=False)
class PrototypeBank:
    rows: np.ndarray
    config: DetectorConfig
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ValueError("bank rows must be 2-D")
        if not np.all(np.isfinite(rows)):
            raise ValueError("bank rows must be finite")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]

    @property
    def bank_id(self) -> str:
        h = hashlib.sha256(self.rows.tobytes())
        h.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        return h.hexdigest()[:16]

    def check_dim(self, dim: Optional[int] = None) -> None:
        if self.dim != self.config.dim:
            raise DimMismatch(f"bank rows have dim {self.dim}, config scales imply {self.config.dim}")
        if dim is not None and dim != self.dim:
            raise DimMismatch(f"features have dim {dim}, bank has {self.dim}")


def site_features(desc: Description, config: DetectorConfig):
    sites = sample_sites(desc.cloud, config)
    agg = aggregate_neighborhoods(desc.features, desc.cloud, sites, config.k_l, desc.index, desc.neighbors)
    return sites, agg.astype(np.float32)


def fit_descriptions(descs: Sequence[Description], config: DetectorConfig, bank_cap: Optional[int] = None,
                     provenance: Optional[dict] = None) -> PrototypeBank:
    if len(descs) == 0:
        raise EmptyTrainingSet("no training clouds")
    for d in descs:
        if d.cloud.is_anomalous:
            raise ValueError("training clouds must be normal")
    return bank_from_rows([site_features(d, config)[1] for d in descs], config, bank_cap, provenance)


def bank_from_rows(per_cloud_rows: Sequence[np.ndarray], config: DetectorConfig, bank_cap: Optional[int] = None,
                   provenance: Optional[dict] = None) -> PrototypeBank:
    if len(per_cloud_rows) == 0:
        raise EmptyTrainingSet("no training clouds")
    rows = np.concatenate(per_cloud_rows, axis=0)
    if bank_cap is not None and rows.shape[0] > bank_cap:
        keep = Rng(config.seed).generator("bank-cap", rows.shape[0], int(bank_cap)).choice(
            rows.shape[0], size=int(bank_cap), replace=False)
        rows = rows[np.sort(keep)]
    prov = {"n_clouds": len(per_cloud_rows), "seed": config.seed, "bank_cap": bank_cap}
    prov.update(provenance or {})
    return PrototypeBank(rows, config, prov)


def fit(clouds: Iterable[PointCloud], config: DetectorConfig = DetectorConfig(), bank_cap: Optional[int] = None,
        files: Optional[Sequence[str]] = None) -> PrototypeBank:
    """Build a prototype bank from normal training clouds.

    Clouds may be a lazy iterable; only one description is alive at a time.
    """
    rows = []
    for cloud in clouds:
        if cloud.is_anomalous:
            raise ValueError("training clouds must be normal")
        rows.append(site_features(describe(cloud, config), config)[1])
    if not rows:
        raise EmptyTrainingSet("no training clouds")
    prov = {"files": [str(f) for f in files]} if files is not None else {}
    return bank_from_rows(rows, config, bank_cap, prov)


@njit(cache=True)
def _shortlist(dots, bsq, margin, out_q, out_b):
    """Bank rows whose approximate squared distance is within ``2*margin`` of the row minimum."""
    m = 0
    for q in range(dots.shape[0]):
        best = np.inf
        for j in range(dots.shape[1]):
            v = bsq[j] - 2.0 * dots[q, j]
            if v < best:
                best = v
        cut = best + 2.0 * margin[q]
        for j in range(dots.shape[1]):
            if bsq[j] - 2.0 * dots[q, j] <= cut:
                if m == out_q.size:
                    return -1
                out_q[m] = q
                out_b[m] = j
                m += 1
    return m


def nearest_prototype(queries: np.ndarray, bank_rows: np.ndarray):
    """Exact nearest bank row per query (lowest index on ties).

    A BLAS pass shortlists rows within a rounding margin of the approximate
    minimum; the shortlist is rescored with direct differences.
    """
    q = np.asarray(queries, dtype=np.float64)
    b = np.ascontiguousarray(bank_rows, dtype=np.float64)
    bsq = np.einsum("bd,bd->b", b, b)
    bmax = float(bsq.max())
    best = np.empty(q.shape[0], dtype=np.int64)
    dist = np.empty(q.shape[0])
    cap = 64 * _QUERY_CHUNK
    for lo in range(0, q.shape[0], _QUERY_CHUNK):
        qc = q[lo:lo + _QUERY_CHUNK]
        qsq = np.einsum("qd,qd->q", qc, qc)
        dots = qc @ b.T
        margin = 1e-9 * (qsq + bmax) + 1e-300
        while True:
            qi, bi = np.empty(cap, dtype=np.int64), np.empty(cap, dtype=np.int64)
            m = _shortlist(dots, bsq, margin, qi, bi)
            if m >= 0:
                break
            cap *= 4
        qi, bi = qi[:m], bi[:m]
        diff = qc[qi] - b[bi]
        exact = np.einsum("md,md->m", diff, diff)
        order = np.lexsort((bi, exact, qi))
        qi, bi, exact = qi[order], bi[order], exact[order]
        first = np.ones(qi.size, dtype=bool)
        first[1:] = qi[1:] != qi[:-1]
        best[lo + qi[first]] = bi[first]
        dist[lo + qi[first]] = np.sqrt(exact[first])
    return best, dist


@dataclass(frozen=True, eq=False)
class ScoreResult:
    site_indices: np.ndarray
    site_scores: np.ndarray
    object_score: float
    point_scores: Optional[np.ndarray] = None
    nearest_rows: Optional[np.ndarray] = None
    wall_time_ms: float = 0.0


def propagate_scores(cloud: PointCloud, sites: np.ndarray, scores: np.ndarray, mode: str = "nearest") -> np.ndarray:
    site_index = KnnIndex(cloud.points[sites])
    if mode == "nearest":
        nb, _ = site_index.query(cloud.points, 1)
        return scores[nb[:, 0]]
    nb, d = site_index.query(cloud.points, min(3, sites.size))
    exact = d[:, 0] == 0
    w = 1.0 / np.where(d == 0, 1.0, d)
    out = (w * scores[nb]).sum(axis=1) / w.sum(axis=1)
    out[exact] = scores[nb[exact, 0]]
    return out


def score_description(bank: PrototypeBank, desc: Description, propagate: bool = False) -> ScoreResult:
    t0 = time.perf_counter()
    bank.check_dim(desc.features.dim)
    config = bank.config
    sites, feats = site_features(desc, config)
    rows, A = nearest_prototype(feats, bank.rows)
    point_scores = propagate_scores(desc.cloud, sites, A, config.propagation) if propagate else None
    return ScoreResult(sites, A, float(A.max()), point_scores, rows, (time.perf_counter() - t0) * 1e3)


def score(bank: PrototypeBank, cloud: PointCloud, propagate: bool = False) -> ScoreResult:
    """Site scores, object score and (optionally) a full-resolution score map."""
    t0 = time.perf_counter()
    bank.check_dim()
    res = score_description(bank, describe(cloud, bank.config), propagate)
    return ScoreResult(res.site_indices, res.site_scores, res.object_score, res.point_scores, res.nearest_rows,
                       (time.perf_counter() - t0) * 1e3)


def save_bank(bank: PrototypeBank, path) -> None:
    header = json.dumps(
        {"config": bank.config.to_dict(), "provenance": bank.provenance, "rows": len(bank), "dim": bank.dim},
        sort_keys=True,
    ).encode("utf-8")
    body = BANK_MAGIC + struct.pack("<II", BANK_VERSION, len(header)) + header + bank.rows.astype("<f4").tobytes()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_bank(path) -> PrototypeBank:
    data = Path(path).read_bytes()
    if len(data) < len(BANK_MAGIC) + 8 + 32:
        raise ChecksumError(f"{path}: file too short to be a bank")
    if data[: len(BANK_MAGIC)] != BANK_MAGIC:
        raise ParseError(f"{path}: not a prototype bank file", offset=0)
    version, hlen = struct.unpack_from("<II", data, len(BANK_MAGIC))
    if version != BANK_VERSION:
        raise VersionMismatch(f"{path}: bank version {version}, expected {BANK_VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupted)")
    off = len(BANK_MAGIC) + 8
    meta = json.loads(body[off:off + hlen].decode("utf-8"))
    off += hlen
    n, dim = int(meta["rows"]), int(meta["dim"])
    if len(body) - off != 4 * n * dim:
        raise ChecksumError(f"{path}: row block size does not match header")
    rows = np.frombuffer(body[off:], dtype="<f4").reshape(n, dim)
    return PrototypeBank(rows, DetectorConfig.from_dict(meta["config"]), meta.get("provenance", {}))
