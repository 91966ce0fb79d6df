import math

import numpy as np
import pytest

from oracles import pair_features_direct, spfh_direct
from pcdefect import KnnIndex, PointCloud, Rng, estimate_normals, sample_primitive
from pcdefect.descriptor import (
    DIM,
    FeatureMatrix,
    fpfh,
    load_features,
    multiscale_fpfh,
    pair_features,
    save_features,
    spfh,
)
from pcdefect.errors import ChecksumError, DegeneratePair


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


class TestPairFeatures:
    def test_coplanar(self):
        z = [0.0, 0.0, 1.0]
        assert pair_features([0, 0, 0], z, [1, 0, 0], z) == (0.0, 0.0, 0.0)

    def test_symmetric(self, np_rng):
        for _ in range(500):
            p, q = np_rng.standard_normal((2, 3))
            n, m = _unit(np_rng.standard_normal(3)), _unit(np_rng.standard_normal(3))
            assert pair_features(p, n, q, m) == pair_features(q, m, p, n)

    def test_matches_direct_formula(self, np_rng):
        for _ in range(500):
            p, q = np_rng.standard_normal((2, 3))
            n, m = _unit(np_rng.standard_normal(3)), _unit(np_rng.standard_normal(3))
            assert np.allclose(pair_features(p, n, q, m), pair_features_direct(p, n, q, m), atol=1e-12)

    def test_ranges(self, np_rng):
        from pcdefect.descriptor import _pair  # batch path for 1e5 draws
        for _ in range(100_000 // 1000):
            pts = np_rng.standard_normal((1000, 2, 3))
            nrm = np_rng.standard_normal((1000, 2, 3))
            nrm /= np.linalg.norm(nrm, axis=2, keepdims=True)
            for k in range(1000):
                a, f, t, ok = _pair(pts[k, 0], nrm[k, 0], pts[k, 1], nrm[k, 1])
                assert ok and -1 <= a <= 1 and -1 <= f <= 1 and -math.pi < t <= math.pi

    def test_coincident_points(self):
        with pytest.raises(DegeneratePair):
            pair_features([1, 1, 1], [0, 0, 1], [1, 1, 1], [0, 0, 1])

    def test_line_parallel_to_normal_uses_fallback(self):
        a, f, t = pair_features([0, 0, 0], [0, 0, 1], [0, 0, 1], [0, 0, 1])
        assert f == 1.0 and a == 0.0 and t == 0.0


def _plane_patch(rng, n=400):
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.random((n, 2))
    return PointCloud(pts, normals=np.tile([0.0, 0.0, 1.0], (n, 1)))


class TestSpfh:
    def test_plane_mass_in_zero_bins(self, np_rng):
        c = _plane_patch(np_rng)
        h = spfh(c, None, KnnIndex(c.points), 0, 20)
        assert h[5] == 100.0 and h[22 + 5] == 100.0
        assert h[11:22].sum() == pytest.approx(100.0)

    def test_single_neighbor(self, np_rng):
        c = _plane_patch(np_rng)
        h = spfh(c, None, KnnIndex(c.points), 3, 1)
        for block in range(3):
            seg = h[block * 11:(block + 1) * 11]
            assert sorted(seg.tolist())[-1] == 100.0 and np.count_nonzero(seg) == 1

    def test_matches_direct_oracle(self, sphere_5k):
        n = estimate_normals(sphere_5k, 16)
        index = KnnIndex(sphere_5k.points)
        for i in range(0, 5000, 250):
            nb, _ = index.query(sphere_5k.points[i], 31)
            nb = [j for j in nb[0] if j != i][:30]
            ref = spfh_direct(n.points, n.normals, i, nb)
            assert np.array_equal(spfh(n, None, index, i, 30), ref)

    def test_block_mass(self, sphere_5k):
        from pcdefect.descriptor import neighbor_table, spfh_from_table
        n = estimate_normals(sphere_5k, 16)
        rows = spfh_from_table(n.points, n.normals, neighbor_table(n.points, 25))
        for b in range(3):
            assert np.allclose(rows[:, b * 11:(b + 1) * 11].sum(axis=1), 100.0, atol=1e-9)


class TestFpfh:
    def test_identical_geometries_far_apart(self, np_rng):
        patch = np_rng.random((300, 3)) * [1, 1, 0.05]
        pts = np.vstack([patch, patch + [100.0, 0, 0]])
        nrm = np_rng.standard_normal((300, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        c = PointCloud(pts, normals=np.vstack([nrm, nrm]))
        f = fpfh(c, None, 20).rows
        assert np.allclose(f[:300], f[300:], atol=1e-9)

    def test_plane_interior_homogeneous(self):
        g = np.linspace(0, 1, 60)
        xx, yy = np.meshgrid(g, g)
        pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
        c = PointCloud(pts, normals=np.tile([0.0, 0, 1], (pts.shape[0], 1)))
        f = fpfh(c, None, 12).rows
        inner = (np.abs(pts[:, 0] - 0.5) < 0.4) & (np.abs(pts[:, 1] - 0.5) < 0.4)
        norms = np.linalg.norm(f[inner], axis=1)
        assert norms.std() / norms.mean() < 0.05

    def test_rigid_invariance(self, np_rng):
        c = sample_primitive("sphere", 3000, 1.0, Rng(2)).points * [1.0, 0.8, 0.6]
        ref = fpfh(estimate_normals(PointCloud(c), 16), None, 30).rows
        R = _random_rotation(np_rng)
        moved = estimate_normals(PointCloud(c @ R.T + [3.0, -1.0, 2.0]), 16)
        got = fpfh(moved, None, 30).rows
        ok = np.all(np.abs(got - ref) <= 1e-5, axis=1)
        assert ok.mean() >= 0.99

    def test_nonnegative_finite(self, sphere_5k):
        f = fpfh(estimate_normals(sphere_5k, 16), None, 20).rows
        assert np.all(np.isfinite(f)) and np.all(f >= 0)


class TestMultiscale:
    def test_default_dim(self, sphere_5k):
        f = multiscale_fpfh(estimate_normals(sphere_5k, 16))
        assert f.dim == 99 and f.scales == (40, 80, 120)

    def test_single_scale_equals_fpfh(self, sphere_5k):
        c = estimate_normals(sphere_5k, 16)
        assert np.array_equal(multiscale_fpfh(c, None, [40]).rows, fpfh(c, None, 40).rows)

    def test_permutation_alignment(self, np_rng):
        c = estimate_normals(sample_primitive("sphere", 1500, 1.0, Rng(4)), 16)
        perm = np_rng.permutation(c.n)
        base = multiscale_fpfh(c, None, [10, 20]).rows
        permuted = multiscale_fpfh(c.subset(perm), None, [10, 20]).rows
        assert np.allclose(permuted, base[perm], atol=1e-9)

    def test_clamps_to_n_minus_one(self):
        c = estimate_normals(sample_primitive("sphere", 60, 1.0, Rng(4)), 8)
        f = multiscale_fpfh(c, None, [40, 80])
        assert f.dim == 2 * DIM and np.array_equal(f.rows[:, DIM:], fpfh(c, None, 59).rows)

    def test_locality(self, np_rng):
        c = estimate_normals(sample_primitive("sphere", 3000, 1.0, Rng(9)), 16)
        index = KnnIndex(c.points)
        _, d = index.query(c.points[0], 41)
        far = np.linalg.norm(c.points - c.points[0], axis=1) > 3 * d[0, -1]
        pts = c.points.copy()
        pts[far] *= 1.0 + 0.01 * np_rng.random((int(far.sum()), 1))
        moved = PointCloud(pts, normals=c.normals)
        assert np.array_equal(multiscale_fpfh(moved, None, [40]).rows[0], multiscale_fpfh(c, None, [40]).rows[0])

    def test_rejects_descending_scales(self, sphere_5k):
        with pytest.raises(ValueError):
            multiscale_fpfh(estimate_normals(sphere_5k, 16), None, [80, 40])


def test_feature_dump_roundtrip(tmp_path, np_rng):
    f = FeatureMatrix(np_rng.random((10, 66)).astype(np.float32).astype(np.float64), (40, 80))
    save_features(f, tmp_path / "f.bin", source="x.ply")
    raw = (tmp_path / "f.bin").read_bytes()
    assert np.frombuffer(raw[:8], dtype="<u4").tolist() == [10, 66]
    back = load_features(tmp_path / "f.bin")
    assert np.array_equal(back.rows, f.rows) and back.scales == (40, 80)
    (tmp_path / "f.bin").write_bytes(raw[:8] + bytes(len(raw) - 8))
    with pytest.raises(ChecksumError):
        load_features(tmp_path / "f.bin")
