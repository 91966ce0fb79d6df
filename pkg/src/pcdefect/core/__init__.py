from pcdefect.core.cloud import PointCloud, bounding_diagonal, random_downsample
from pcdefect.core.knn import KnnIndex, build_knn_index, knn_query
from pcdefect.core.normals import estimate_normals, normals_from_neighbors
from pcdefect.core.ply import read_ply, write_ply
from pcdefect.core.primitives import SHAPES, sample_primitive
from pcdefect.core.rng import Rng

__all__ = [
    "KnnIndex",
    "PointCloud",
    "Rng",
    "SHAPES",
    "bounding_diagonal",
    "build_knn_index",
    "estimate_normals",
    "knn_query",
    "normals_from_neighbors",
    "random_downsample",
    "read_ply",
    "sample_primitive",
    "write_ply",
]
