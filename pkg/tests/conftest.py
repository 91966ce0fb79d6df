import numpy as np
import pytest

from pcdefect import PointCloud, Rng, sample_primitive


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sphere_5k():
    return sample_primitive("sphere", 5000, 1.0, Rng(7))


@pytest.fixture
def line_cloud():
    return PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]))


def brute_knn(points, query, k):
    """Reference kNN: full distance sort, ties broken by index."""
    d = np.sqrt(((points - query) ** 2).sum(axis=1))
    order = np.lexsort((np.arange(points.shape[0]), d))
    return order[:k], d[order[:k]]
