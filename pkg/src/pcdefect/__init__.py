"""Synthesis and detection of subtle geometric anomalies on dense point clouds."""

from pcdefect.core import (
    KnnIndex,
    PointCloud,
    Rng,
    bounding_diagonal,
    build_knn_index,
    estimate_normals,
    knn_query,
    random_downsample,
    read_ply,
    sample_primitive,
    write_ply,
)

__version__ = "0.1.0"

__all__ = [
    "KnnIndex",
    "PointCloud",
    "Rng",
    "bounding_diagonal",
    "build_knn_index",
    "estimate_normals",
    "knn_query",
    "random_downsample",
    "read_ply",
    "sample_primitive",
    "write_ply",
]
