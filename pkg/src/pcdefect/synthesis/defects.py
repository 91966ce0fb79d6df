"""Anchor-guided defect synthesis.

A defect is grown along the shortest graph path between two anchors: the
points within a control radius of that path are pushed along their mean
normal, with a displacement that falls off linearly from the path to the
region boundary.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from pcdefect.core.cloud import PointCloud, bounding_diagonal
from pcdefect.core.knn import KnnIndex
from pcdefect.core.normals import estimate_normals
from pcdefect.core.rng import Rng
from pcdefect.errors import InvalidCloud, NoFeasibleAnchor, ZeroNormal
from pcdefect.synthesis.graph import GeodesicPath, KnnGraph, build_graph, dijkstra, trace_path
from pcdefect.synthesis.protocol import DefectType, Difficulty, protocol_ranges

log = logging.getLogger(__name__)

MIN_POINTS = 1000
DEFAULT_K_GRAPH = 8
DEFAULT_NORMAL_K = 16
DEFAULT_MAX_TRIES = 20
# alpha bands at or below this are point-like: both anchors coincide
POINT_ALPHA = 1e-3


@dataclass(frozen=True)
class RegionMask:
    members: np.ndarray
    axis_distance: np.ndarray
    d_max: float
    radius: float

    def __len__(self):
        return int(self.members.size)

    def as_labels(self, n: int) -> np.ndarray:
        lab = np.zeros(n, dtype=bool)
        lab[self.members] = True
        return lab


@dataclass(frozen=True)
class DefectSpec:
    defect_type: str
    difficulty: str
    alpha: float
    beta: float
    gamma: float
    dir: int
    seed: int
    diagonal: float
    length: float
    radius: float
    displacement: float
    anchor_start: int = -1
    anchor_end: int = -1
    mask_size: int = 0

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["type"] = rec.pop("defect_type")
        return rec


@dataclass(frozen=True, eq=False)
class SynthesisContext:
    """Per-cloud state shared by every defect drawn on the same input."""

    cloud: PointCloud
    index: KnnIndex
    graph: KnnGraph
    diagonal: float


def prepare(cloud: PointCloud, k_graph: int = DEFAULT_K_GRAPH, normal_k: int = DEFAULT_NORMAL_K) -> SynthesisContext:
    if cloud.n < MIN_POINTS:
        raise InvalidCloud(f"defect synthesis needs at least {MIN_POINTS} points, got {cloud.n}")
    index = KnnIndex(cloud.points)
    if cloud.normals is None:
        cloud = estimate_normals(cloud, normal_k, index=index)
    graph = build_graph(cloud, k_graph, index=index)
    return SynthesisContext(cloud, index, graph, bounding_diagonal(cloud))


def select_anchors(cloud, graph, alpha_range, D, rng: Rng, max_tries: int = DEFAULT_MAX_TRIES):
    """Draw a start anchor, then an end anchor whose geodesic distance lies in the band.

    The band is ``[alpha_min * D, alpha_max * D]``. Bands with an upper bound
    of at most ``POINT_ALPHA`` yield a single-vertex path.
    """
    lo, hi = float(alpha_range[0]), float(alpha_range[1])
    if not (D > 0):
        raise ValueError("diagonal must be > 0")
    gen = rng.generator("anchors")
    n = graph.n
    if hi <= POINT_ALPHA:
        s = int(gen.integers(n))
        return s, s, GeodesicPath(s, s, (s,), 0.0)
    lo_d, hi_d = lo * D, hi * D
    for attempt in range(max_tries):
        s = int(gen.integers(n))
        dist, pred = dijkstra(graph, s, limit=hi_d)
        cand = np.nonzero((dist >= lo_d) & (dist <= hi_d) & (dist > 0))[0]
        if cand.size == 0:
            log.debug("anchor attempt %d from %d: empty band", attempt, s)
            continue
        e = int(cand[gen.integers(cand.size)])
        verts = trace_path(pred, s, e)
        return s, e, GeodesicPath(s, e, tuple(verts), float(dist[e]))
    raise NoFeasibleAnchor(f"no end anchor within [{lo_d:.6g}, {hi_d:.6g}] after {max_tries} start draws")


def expand_region(cloud: PointCloud, path: GeodesicPath, r: float, index: KnnIndex | None = None) -> RegionMask:
    """Points strictly closer than ``r`` to at least one path vertex."""
    if not r > 0:
        raise ValueError("radius must be > 0")
    index = index if index is not None else KnnIndex(cloud.points)
    axis = cloud.points[np.asarray(path.vertices, dtype=np.int64)]
    members, dist = index.query_radius(axis, r)
    dist = dist.copy()
    dist[np.isin(members, path.vertices)] = 0.0
    d_max = float(dist.max()) if dist.size else 0.0
    return RegionMask(members, dist, d_max, float(r))


def distort(cloud: PointCloud, mask: RegionMask, spec: DefectSpec) -> PointCloud:
    if cloud.normals is None:
        raise InvalidCloud("distortion needs normals")
    if len(mask) == 0:
        raise ValueError("empty region")
    mean = cloud.normals[mask.members].mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise ZeroNormal("member normals cancel out")
    direction = mean / norm
    if mask.d_max > 0:
        falloff = 1.0 - mask.axis_distance / mask.d_max
    else:
        falloff = np.ones(len(mask))
    pts = np.array(cloud.points)
    pts[mask.members] = pts[mask.members] + (spec.dir * spec.displacement) * falloff[:, None] * direction
    return PointCloud(pts, cloud.normals, mask.as_labels(cloud.n))


def draw_spec(defect_type, difficulty, D: float, rng: Rng, direction: Optional[int] = None) -> DefectSpec:
    ranges = protocol_ranges(defect_type, difficulty)
    gen = rng.generator("defect-params")
    beta = float(gen.uniform(*ranges.beta))
    gamma = float(gen.uniform(*ranges.gamma))
    drawn_dir = 1 if gen.integers(2) == 1 else -1
    d = drawn_dir if direction is None else int(direction)
    if d not in (1, -1):
        raise ValueError("dir must be +1 or -1")
    return DefectSpec(
        defect_type=ranges.defect_type.value,
        difficulty=ranges.difficulty.value,
        alpha=0.0,
        beta=beta,
        gamma=gamma,
        dir=d,
        seed=rng.seed,
        diagonal=D,
        length=0.0,
        radius=beta * D,
        displacement=gamma * D,
    )


def synthesize_defect(
    cloud: PointCloud,
    defect_type,
    difficulty,
    rng: Rng,
    context: SynthesisContext | None = None,
    direction: Optional[int] = None,
    max_tries: int = DEFAULT_MAX_TRIES,
):
    """Generate one labelled anomalous cloud; returns ``(cloud, DefectSpec)``.

    The returned cloud carries labels but no normals.
    """
    ctx = context if context is not None else prepare(cloud)
    dt, df = DefectType(defect_type), Difficulty(difficulty)
    ranges = protocol_ranges(dt, df)
    spec = draw_spec(dt, df, ctx.diagonal, rng, direction)
    s, e, path = select_anchors(ctx.cloud, ctx.graph, ranges.alpha, ctx.diagonal, rng, max_tries)
    mask = expand_region(ctx.cloud, path, spec.radius, ctx.index)
    spec = DefectSpec(
        **{
            **asdict(spec),
            "alpha": path.length / ctx.diagonal,
            "length": path.length,
            "anchor_start": s,
            "anchor_end": e,
            "mask_size": len(mask),
        }
    )
    out = distort(ctx.cloud, mask, spec)
    return PointCloud(out.points, None, out.labels), spec
