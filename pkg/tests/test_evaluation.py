import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import pairwise_auroc
from pcdefect import Rng, sample_primitive, write_ply
from pcdefect.detector import DetectorConfig, fit
from pcdefect.errors import DegenerateLabels
from pcdefect.evaluation import (
    ScoredCloud,
    auroc,
    benchmark_throughput,
    evaluate_category,
    load_manifest,
    report_from_scored,
    sweep,
    write_sweep_csv,
)
from pcdefect.synthesis import generate_dataset


class TestAuroc:
    def test_worked_example(self):
        assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_all_tied(self):
        assert auroc([1.0] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_perfect_and_reversed(self):
        assert auroc([0, 1, 2, 3], [0, 0, 1, 1]) == 1.0
        assert auroc([3, 2, 1, 0], [0, 0, 1, 1]) == 0.0

    def test_degenerate(self):
        with pytest.raises(DegenerateLabels):
            auroc([1, 2], [1, 1])
        with pytest.raises(DegenerateLabels):
            auroc([1, 2], [0, 0])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
    def test_pairwise_oracle(self, pairs):
        s = [float(a) for a, _ in pairs]
        y = [b for _, b in pairs]
        if all(y) or not any(y):
            return
        assert auroc(s, y) == pytest.approx(pairwise_auroc(s, y), abs=1e-12)

    def test_invariances(self, np_rng):
        s = np_rng.integers(0, 20, 300).astype(float)
        y = np_rng.random(300) < 0.3
        a = auroc(s, y)
        assert auroc(3.0 * s + 7.0, y) == a
        assert auroc(np.exp(s / 5.0), y) == pytest.approx(a, abs=1e-15)
        assert auroc(-s, y) == pytest.approx(1.0 - a, abs=1e-12)
        assert auroc(s, ~y) == pytest.approx(1.0 - a, abs=1e-12)
        perm = np_rng.permutation(300)
        assert auroc(s[perm], y[perm]) == a


def _scored(name, labels, obj, pts, t=None, d=None):
    return ScoredCloud(name, t, d, np.asarray(labels, bool), obj, np.asarray(pts, float), 0.5)


def test_report_micro_fixture():
    items = [
        _scored("n0", [0, 0, 0], 0.1, [0.1, 0.0, 0.1]),
        _scored("n1", [0, 0, 0], 0.3, [0.3, 0.2, 0.1]),
        _scored("a0", [0, 1, 1], 0.9, [0.1, 0.9, 0.8], "areal", "easy"),
        _scored("a1", [1, 0, 0], 0.2, [0.2, 0.3, 0.0], "scratch", "hard"),
    ]
    rep = report_from_scored(items, "demo", config={"seed": 1})
    # Object labels 0,0,1,1 vs scores .1,.3,.9,.2 -> 3 of 4 pairs ordered.
    assert rep["o_roc"] == 0.75
    s = np.concatenate([c.point_scores for c in items])
    y = np.concatenate([c.labels for c in items])
    assert rep["p_roc"] == round(pairwise_auroc(s, y), 6)
    assert set(rep["by_difficulty"]) == {"easy", "hard"}
    assert rep["by_difficulty"]["easy"]["o_roc"] == 1.0
    assert rep["by_difficulty"]["easy"]["n_clouds"] == 3
    assert rep["by_type"]["scratch"]["o_roc"] == 0.5
    assert rep["throughput"]["clouds_per_sec"] == 2.0
    assert rep["config"] == {"seed": 1}
    json.dumps(rep)


def test_report_degenerate_is_null():
    items = [_scored("n0", [0, 0], 0.1, [0.1, 0.2])]
    rep = report_from_scored(items)
    assert rep["o_roc"] is None and rep["p_roc"] is None
    assert "o_roc" in rep["errors"]


def test_per_cloud_mode():
    items = [
        _scored("a", [0, 1], 0.5, [0.0, 1.0], "areal", "easy"),
        _scored("b", [0, 1], 0.5, [1.0, 0.0], "areal", "easy"),
    ]
    assert report_from_scored(items, p_roc_mode="per_cloud")["p_roc"] == 0.5


@pytest.fixture(scope="module")
def tiny_bank():
    cfg = DetectorConfig(t=128, k_l=8, scales=(10, 20), seed=2)
    return fit([sample_primitive("sphere", 2000, 1.0, Rng(i)) for i in range(2)], cfg)


def test_evaluate_category_end_to_end(tmp_path, tiny_bank):
    normals = tmp_path / "normals"
    normals.mkdir()
    for i in range(2):
        write_ply(sample_primitive("sphere", 2000, 1.0, Rng(20 + i)), normals / f"sphere_{i:03d}.ply")
    out = tmp_path / "synth"
    generate_dataset(normals, out, per_type=1, types=["areal"], difficulties=["easy"], seed=4)
    recs = load_manifest(out / "manifest.json", normals)
    assert len(recs) == 4
    rep = evaluate_category(recs, tiny_bank, "sphere")
    assert rep["n_clouds"] == 4 and rep["n_anomalous"] == 2
    assert 0.0 <= rep["o_roc"] <= 1.0 and 0.0 <= rep["p_roc"] <= 1.0
    assert rep["config"]["bank_id"] == tiny_bank.bank_id


def test_benchmark_counts(tiny_bank):
    clouds = [sample_primitive("sphere", 2000, 1.0, Rng(30 + i)) for i in range(2)]
    res = benchmark_throughput(tiny_bank, clouds, warmup=1, reps=2)
    assert len(res["samples_s"]) == 4 and res["deterministic"]
    assert res["fps"] > 0 and res["mean_s"] > 0


def test_sweep_csv_shape(tmp_path):
    from pcdefect.synthesis import synthesize_defect

    base = DetectorConfig(t=64, k_l=8, scales=(10,), seed=1)
    train = (sample_primitive("sphere", 1500, 1.0, Rng(i)) for i in range(2))

    def test_iter():
        for i in range(2):
            c = sample_primitive("sphere", 1500, 1.0, Rng(40 + i))
            yield {"path": f"n{i}.ply"}, c
            bad, _ = synthesize_defect(c, "areal", "easy", Rng(i))
            yield {"path": f"a{i}.ply", "type": "areal", "difficulty": "easy"}, bad

    rows = sweep("t", [32, 64, 5000], base, train, test_iter())
    assert [r["value"] for r in rows] == [32, 64, 5000]
    write_sweep_csv(rows, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["axis", "value", "o_roc", "p_roc", "fps"]
    assert len(table) == 4 and all(len(r) == 5 for r in table)
    assert all(len(x.split(".")[1]) == 6 for r in table[1:] for x in r[2:] if x)


def test_sweep_rejects_bad_axis():
    with pytest.raises(ValueError):
        sweep("scales", [1], DetectorConfig(), [], [])
