from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from pcdefect.core.rng import Rng
from pcdefect.errors import BadCount, InvalidCloud

NORMAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Positions with optional unit normals, anomaly labels and scores.

    Arrays are stored read-only; every transformation returns a new cloud.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidCloud(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidCloud("a cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidCloud("non-finite coordinates")
        n = pts.shape[0]
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

        if self.normals is not None:
            nrm = np.array(self.normals, dtype=np.float64, copy=True)
            if nrm.shape != (n, 3):
                raise InvalidCloud(f"normals shape {nrm.shape} != {(n, 3)}")
            lengths = np.linalg.norm(nrm, axis=1)
            if not np.all(np.abs(lengths - 1.0) <= NORMAL_TOL):
                raise InvalidCloud("normals must be unit length")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

        if self.labels is not None:
            lab = np.array(self.labels, dtype=bool, copy=True).reshape(-1)
            if lab.shape != (n,):
                raise InvalidCloud(f"labels length {lab.shape[0]} != {n}")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

        if self.scores is not None:
            sc = np.array(self.scores, dtype=np.float64, copy=True).reshape(-1)
            if sc.shape != (n,):
                raise InvalidCloud(f"scores length {sc.shape[0]} != {n}")
            sc.setflags(write=False)
            object.__setattr__(self, "scores", sc)

    def __len__(self):
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def with_normals(self, normals) -> "PointCloud":
        return replace(self, normals=normals)

    def with_labels(self, labels) -> "PointCloud":
        return replace(self, labels=labels)

    def with_scores(self, scores) -> "PointCloud":
        return replace(self, scores=scores)

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.labels is None else self.labels[idx],
            None if self.scores is None else self.scores[idx],
        )

    @property
    def is_anomalous(self) -> bool:
        return self.labels is not None and bool(self.labels.any())


def bounding_diagonal(cloud: PointCloud) -> float:
    pts = cloud.points
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def random_downsample(cloud: PointCloud, m: int, rng: Rng):
    """Pick ``m`` distinct points uniformly without replacement.

    Returns the reduced cloud and the selected indices in sampled order.
    """
    m = int(m)
    if m < 1 or m > cloud.n:
        raise BadCount(f"cannot draw {m} points from a cloud of {cloud.n}")
    idx = rng.generator("downsample", cloud.n, m).choice(cloud.n, size=m, replace=False)
    idx = idx.astype(np.int64)
    return cloud.subset(idx), idx
