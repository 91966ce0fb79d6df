import numpy as np
import pytest

from oracles import brute_graph_edges, brute_region, floyd_warshall
from pcdefect import KnnIndex, PointCloud, Rng, bounding_diagonal, sample_primitive
from pcdefect.errors import NoFeasibleAnchor, Unreachable, ZeroNormal
from pcdefect.synthesis import (
    DefectSpec,
    DefectType,
    Difficulty,
    GeodesicPath,
    RegionMask,
    build_graph,
    distort,
    expand_region,
    geodesic_path,
    prepare,
    protocol_ranges,
    select_anchors,
    synthesize_defect,
)


def _edges(graph):
    out = set()
    for i in range(graph.n):
        nb, w = graph.neighbors(i)
        for j, ww in zip(nb, w):
            out.add((min(i, int(j)), max(i, int(j))))
    return out


class TestGraph:
    def test_collinear(self, line_cloud):
        g = build_graph(line_cloud, 1)
        assert _edges(g) == {(0, 1), (1, 2)}
        assert g.neighbors(1)[1].tolist() == [1.0, 1.0]

    def test_complete(self, np_rng):
        c = PointCloud(np_rng.random((12, 3)))
        g = build_graph(c, 11)
        assert len(_edges(g)) == 12 * 11 // 2

    def test_matches_brute_union(self, np_rng):
        pts = np_rng.random((50, 3))
        assert _edges(build_graph(PointCloud(pts), 4)) == brute_graph_edges(pts, 4)

    def test_symmetric_weights(self, np_rng):
        g = build_graph(PointCloud(np_rng.random((80, 3))), 5)
        table = {}
        for i in range(g.n):
            for j, w in zip(*g.neighbors(i)):
                table[(i, int(j))] = w
        for (i, j), w in table.items():
            assert table[(j, i)] == w


class TestGeodesic:
    def test_path_graph(self, line_cloud):
        p = geodesic_path(build_graph(line_cloud, 1), line_cloud, 0, 2)
        assert p.vertices == (0, 1, 2) and p.length == 2.0

    def test_same_anchor(self, line_cloud):
        p = geodesic_path(build_graph(line_cloud, 1), line_cloud, 1, 1)
        assert p.vertices == (1,) and p.length == 0.0

    def test_unreachable(self):
        pts = np.array([[0.0, 0, 0], [0.1, 0, 0], [10.0, 0, 0], [10.1, 0, 0]])
        c = PointCloud(pts)
        with pytest.raises(Unreachable):
            geodesic_path(build_graph(c, 1), c, 0, 3)

    def test_floyd_warshall_all_pairs(self, np_rng):
        for trial in range(20):
            n = int(np_rng.integers(2, 21))
            c = PointCloud(np_rng.random((n, 3)))
            g = build_graph(c, int(np_rng.integers(1, 4)))
            edges = [(i, int(j), float(w)) for i in range(n) for j, w in zip(*g.neighbors(i))]
            ref = floyd_warshall(n, edges)
            for s in range(n):
                for e in range(n):
                    if not np.isfinite(ref[s, e]):
                        with pytest.raises(Unreachable):
                            geodesic_path(g, c, s, e)
                        continue
                    p = geodesic_path(g, c, s, e)
                    assert p.length == pytest.approx(ref[s, e], rel=1e-12, abs=0)
                    assert p.vertices[0] == s and p.vertices[-1] == e
                    walked = 0.0
                    for a, b in zip(p.vertices[:-1], p.vertices[1:]):
                        nb, w = g.neighbors(a)
                        walked += float(w[list(nb).index(b)])
                    assert walked == pytest.approx(p.length, rel=1e-9)


class TestProtocol:
    def test_striate_medium(self):
        r = protocol_ranges("striate", "medium")
        assert r.gamma == (3e-3, 5e-3) and r.alpha == (0.02, 0.1) and r.beta == (0.01, 0.03)

    def test_sphere_easy(self):
        assert protocol_ranges(DefectType.SPHERE, Difficulty.EASY).beta == (7e-3, 9e-3)

    def test_areal_hard(self):
        assert protocol_ranges("areal", "hard").gamma == (1e-3, 3e-3)

    def test_scratch_tiers(self):
        assert protocol_ranges("scratch", "easy").alpha == (0.3, 0.4)
        assert protocol_ranges("scratch", "hard").beta == (1e-3, 2e-3)

    @pytest.mark.parametrize("t", list(DefectType))
    @pytest.mark.parametrize("d", list(Difficulty))
    def test_ranges_ordered(self, t, d):
        r = protocol_ranges(t, d)
        for lo, hi in (r.alpha, r.beta, r.gamma):
            assert lo <= hi
        assert r.alpha_upper_only == (t is DefectType.SPHERE)


class TestAnchors:
    def test_point_like(self, sphere_5k):
        g = build_graph(sphere_5k, 8)
        s, e, path = select_anchors(sphere_5k, g, protocol_ranges("sphere", "easy").alpha, 2.0, Rng(1))
        assert s == e and path.vertices == (s,) and path.length == 0.0

    def test_line_band(self):
        pts = np.zeros((101, 3))
        pts[:, 0] = np.arange(101) * 0.01
        c = PointCloud(pts)
        g = build_graph(c, 8)
        D = bounding_diagonal(c)
        for seed in range(25):
            s, e, path = select_anchors(c, g, (0.3, 0.4), D, Rng(seed))
            assert 30 <= abs(e - s) <= 40
            assert 0.3 * D <= path.length <= 0.4 * D

    def test_infeasible(self, sphere_5k):
        g = build_graph(sphere_5k, 8)
        with pytest.raises(NoFeasibleAnchor):
            select_anchors(sphere_5k, g, (20.0, 30.0), bounding_diagonal(sphere_5k), Rng(0), max_tries=3)


class TestRegion:
    def test_tiny_radius_is_path(self, sphere_5k):
        g = build_graph(sphere_5k, 8)
        path = geodesic_path(g, sphere_5k, 0, 10)
        m = expand_region(sphere_5k, path, 1e-9)
        assert sorted(m.members.tolist()) == sorted(set(path.vertices))
        assert m.d_max == 0.0

    def test_huge_radius_is_everything(self, sphere_5k):
        path = GeodesicPath(3, 3, (3,), 0.0)
        m = expand_region(sphere_5k, path, bounding_diagonal(sphere_5k) + 1e-6)
        assert len(m) == sphere_5k.n

    def test_brute_force(self, np_rng):
        pts = np_rng.random((300, 3))
        c = PointCloud(pts)
        g = build_graph(c, 6)
        idx = KnnIndex(pts)
        for _ in range(50):
            s, e = (int(x) for x in np_rng.integers(0, 300, 2))
            path = geodesic_path(g, c, s, e)
            r = float(np_rng.uniform(0.02, 0.3))
            m = expand_region(c, path, r, idx)
            ref_m, ref_d = brute_region(pts, path.vertices, r)
            order = np.argsort(m.members)
            assert m.members[order].tolist() == ref_m.tolist()
            assert np.allclose(m.axis_distance[order], ref_d, rtol=1e-12, atol=0)
            assert m.d_max == pytest.approx(ref_d.max(), rel=1e-12, abs=0)


def _spec(d=0.01, direction=1):
    return DefectSpec("areal", "easy", 0.0, 0.0, 0.0, direction, 0, 1.0, 0.0, 1.0, d)


class TestDistort:
    def _plane(self):
        pts = np.array([[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
        return PointCloud(pts, normals=np.tile([0.0, 0, 1], (4, 1)))

    def test_peak(self):
        c = self._plane()
        mask = RegionMask(np.array([0, 1, 2]), np.array([0.0, 0.5, 1.0]), 1.0, 1.5)
        out = distort(c, mask, _spec(0.01))
        assert out.points[0, 2] == 0.01
        assert out.points[1, 2] == pytest.approx(0.005)
        assert out.points[2, 2] == 0.0
        assert out.labels.tolist() == [True, True, True, False]
        assert out.points[3].tobytes() == c.points[3].tobytes()

    def test_depression_is_negation(self):
        c = self._plane()
        mask = RegionMask(np.array([0, 1, 2]), np.array([0.0, 0.3, 1.0]), 1.0, 1.5)
        up = distort(c, mask, _spec(0.02, 1)).points - c.points
        down = distort(c, mask, _spec(0.02, -1)).points - c.points
        assert np.array_equal(up, -down)

    def test_collapsed_mask_moves_fully(self):
        c = self._plane()
        mask = RegionMask(np.array([1]), np.array([0.0]), 0.0, 1e-9)
        assert distort(c, mask, _spec(0.03)).points[1, 2] == 0.03

    def test_zero_normal(self):
        pts = np.array([[0.0, 0, 0], [0.1, 0, 0]])
        c = PointCloud(pts, normals=np.array([[0.0, 0, 1], [0.0, 0, -1]]))
        with pytest.raises(ZeroNormal):
            distort(c, RegionMask(np.array([0, 1]), np.array([0.0, 0.0]), 0.0, 1.0), _spec())


@pytest.fixture(scope="module")
def ctx():
    return prepare(sample_primitive("sphere", 20_000, 1.0, Rng(21)))


class TestSynthesize:

    def test_areal_easy_gamma(self, ctx):
        for seed in range(5):
            _, spec = synthesize_defect(ctx.cloud, "areal", "easy", Rng(seed), context=ctx)
            assert 5e-3 <= spec.gamma <= 7e-3

    def test_scratch_hard(self, ctx):
        _, spec = synthesize_defect(ctx.cloud, "scratch", "hard", Rng(3), context=ctx)
        assert 1e-3 <= spec.beta <= 2e-3 and 0.1 <= spec.alpha <= 0.2

    def test_locality_and_labels(self, ctx):
        out, spec = synthesize_defect(ctx.cloud, "striate", "medium", Rng(8), context=ctx)
        moved = np.any(out.points != ctx.cloud.points, axis=1)
        assert not np.any(moved & ~out.labels)
        assert int(out.labels.sum()) == spec.mask_size
        assert out.normals is None

    def test_deterministic(self, ctx):
        a, sa = synthesize_defect(ctx.cloud, "areal", "hard", Rng(4), context=ctx)
        b, sb = synthesize_defect(ctx.cloud, "areal", "hard", Rng(4), context=ctx)
        assert a.points.tobytes() == b.points.tobytes() and sa == sb

    def test_fixed_direction(self, ctx):
        _, spec = synthesize_defect(ctx.cloud, "sphere", "easy", Rng(5), context=ctx, direction=-1)
        assert spec.dir == -1

    def test_sphere_type_fraction(self):
        c = sample_primitive("sphere", 100_000, 1.0, Rng(22))
        out, spec = synthesize_defect(c, "sphere", "hard", Rng(0))
        assert spec.anchor_start == spec.anchor_end
        assert out.labels.mean() < 0.01

    def test_small_cloud_rejected(self):
        from pcdefect.errors import InvalidCloud
        with pytest.raises(InvalidCloud):
            synthesize_defect(sample_primitive("sphere", 100, 1.0, Rng(0)), "areal", "easy", Rng(0))
