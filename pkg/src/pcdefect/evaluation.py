from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from pcdefect.core.cloud import PointCloud
from pcdefect.core.ply import read_ply
from pcdefect.detector import (
    DetectorConfig,
    PrototypeBank,
    bank_from_rows,
    describe,
    score,
    score_description,
    site_features,
)
from pcdefect.errors import DegenerateLabels, EmptyTrainingSet

log = logging.getLogger(__name__)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with average ranks for ties."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).astype(bool).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"need both classes, got {n_pos} positive / {n_neg} negative")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True, eq=False)
class ScoredCloud:
    """Everything the metrics need from one scored test cloud."""

    name: str
    defect_type: Optional[str]
    difficulty: Optional[str]
    labels: np.ndarray
    object_score: float
    point_scores: np.ndarray
    seconds: float = 0.0

    @property
    def anomalous(self) -> bool:
        return bool(self.labels.any())


def load_manifest(path, normals_dir=None) -> list:
    """Test records from a manifest (paths resolved against its folder) plus optional normal clouds."""
    records = []
    if path is not None:
        path = Path(path)
        for rec in json.loads(path.read_text()):
            rec = dict(rec)
            if rec.get("status", "ok") == "ok":
                rec["path"] = str((path.parent / rec["path"]).resolve())
            records.append(rec)
    if normals_dir is not None:
        for p in sorted(Path(normals_dir).glob("*.ply")):
            records.append({"status": "ok", "path": str(p.resolve()), "type": "normal", "difficulty": None})
    return records


def _metric(fn):
    try:
        return round(fn(), 6), None
    except DegenerateLabels as exc:
        return None, str(exc)


def _o_roc(items):
    return auroc([c.object_score for c in items], [c.anomalous for c in items])


def _p_roc(items, mode="pooled"):
    if mode == "pooled":
        return auroc(np.concatenate([c.point_scores for c in items]), np.concatenate([c.labels for c in items]))
    per = [auroc(c.point_scores, c.labels) for c in items if c.anomalous and not c.labels.all()]
    if not per:
        raise DegenerateLabels("no cloud has both normal and anomalous points")
    return float(np.mean(per))


def _block(items, mode):
    o, o_err = _metric(lambda: _o_roc(items))
    p, p_err = _metric(lambda: _p_roc(items, mode))
    block = {
        "o_roc": o,
        "p_roc": p,
        "n_clouds": len(items),
        "n_anomalous": sum(c.anomalous for c in items),
        "n_points": int(sum(c.labels.size for c in items)),
    }
    errors = {k: v for k, v in (("o_roc", o_err), ("p_roc", p_err)) if v}
    if errors:
        block["errors"] = errors
    return block


def report_from_scored(scored: Sequence[ScoredCloud], category: str = "", p_roc_mode: str = "pooled",
                       config: Optional[dict] = None, n_skipped: int = 0) -> dict:
    """EvalReport dictionary: overall block plus per-difficulty and per-type breakdowns.

    A breakdown subset holds every normal cloud plus the anomalous clouds of
    that difficulty (or type).
    """
    normals = [c for c in scored if not c.anomalous]
    diffs = sorted({c.difficulty for c in scored if c.anomalous and c.difficulty})
    types = sorted({c.defect_type for c in scored if c.anomalous and c.defect_type})
    total_s = sum(c.seconds for c in scored)
    n_points = int(sum(c.labels.size for c in scored))
    return {
        "category": category,
        "p_roc_mode": p_roc_mode,
        **_block(list(scored), p_roc_mode),
        "n_skipped": n_skipped,
        "by_difficulty": {d: _block(normals + [c for c in scored if c.anomalous and c.difficulty == d], p_roc_mode)
                          for d in diffs},
        "by_type": {t: _block(normals + [c for c in scored if c.anomalous and c.defect_type == t], p_roc_mode)
                    for t in types},
        "throughput": {
            "clouds_per_sec": round(len(scored) / total_s, 6) if total_s > 0 else None,
            "points_per_sec": round(n_points / total_s, 6) if total_s > 0 else None,
            "timing_scope": "normals + descriptors + aggregation + bank search; file I/O excluded",
        },
        "config": config or {},
    }


def _record_type(rec):
    t = rec.get("type")
    return None if t in (None, "normal") else t


def _score_record(args):
    bank, rec = args
    cloud = read_ply(rec["path"])
    res = score(bank, PointCloud(cloud.points), propagate=True)
    labels = _labels_of(cloud)
    return ScoredCloud(Path(rec["path"]).name, _record_type(rec), rec.get("difficulty"), labels,
                       res.object_score, res.point_scores, res.wall_time_ms / 1e3)


def evaluate_category(records: Sequence[dict], bank: PrototypeBank, category: str = "", p_roc_mode: str = "pooled",
                      jobs: int = 1, run_config: Optional[dict] = None) -> dict:
    """Score every usable record and reduce to an EvalReport (manifest order)."""
    usable = [r for r in records if r.get("status", "ok") == "ok"]
    skipped = len(records) - len(usable)
    tasks = [(bank, r) for r in usable]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scored = list(pool.map(_score_record, tasks))
    else:
        scored = [_score_record(t) for t in tasks]
    config = {"detector": bank.config.to_dict(), "bank_id": bank.bank_id, **(run_config or {})}
    return report_from_scored(scored, category, p_roc_mode, config, skipped)


def benchmark_throughput(bank: PrototypeBank, clouds: Sequence[PointCloud], warmup: int = 1, reps: int = 3) -> dict:
    """Serial wall-clock timing of the full per-cloud inference path."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    samples = []
    deterministic = True
    for cloud in clouds:
        bare = PointCloud(cloud.points)
        for _ in range(warmup):
            score(bank, bare)
        ref = None
        for _ in range(reps):
            t0 = time.perf_counter()
            res = score(bank, bare)
            samples.append(time.perf_counter() - t0)
            if ref is None:
                ref = res
            elif res.object_score != ref.object_score or not np.array_equal(res.site_scores, ref.site_scores):
                deterministic = False
    arr = np.asarray(samples)
    mean = float(arr.mean())
    return {
        "n_clouds": len(clouds),
        "warmup": warmup,
        "reps": reps,
        "samples_s": [round(float(x), 6) for x in arr],
        "mean_s": round(mean, 6),
        "median_s": round(float(np.median(arr)), 6),
        "p95_s": round(float(np.percentile(arr, 95)), 6),
        "fps": round(1.0 / mean, 6) if mean > 0 else None,
        "deterministic": deterministic,
        "t": bank.config.t,
        "k_l": bank.config.k_l,
        "scales": list(bank.config.scales),
        "timing_scope": "normals + descriptors + aggregation + bank search; file I/O excluded",
    }


def _timed_describe(cloud, config):
    t0 = time.perf_counter()
    d = describe(PointCloud(cloud.points), config)
    return d, time.perf_counter() - t0


def _labels_of(cloud):
    return cloud.labels if cloud.labels is not None else np.zeros(cloud.n, dtype=bool)


def sweep(axis: str, values: Iterable[int], base: DetectorConfig, train: Iterable[PointCloud],
          test: Iterable[tuple], p_roc_mode: str = "pooled", bank_cap: Optional[int] = None) -> list:
    """Fit + evaluate per value of ``t`` or ``k_l``.

    Each cloud is described once and scored under every value before the
    next is loaded, so memory holds only the banks. ``train`` yields clouds,
    ``test`` yields ``(record, cloud)`` pairs (both may be lazy). Returns
    rows of ``{axis, value, o_roc, p_roc, fps}``; failed cells carry ``error``.
    """
    if axis not in ("t", "k_l"):
        raise ValueError("axis must be 't' or 'k_l'")
    values = [int(v) for v in values]
    if not values:
        raise ValueError("no sweep values")
    configs = [DetectorConfig.from_dict({**base.to_dict(), axis: v}) for v in values]
    errors: dict = {}
    train_rows: list = [[] for _ in configs]
    n_train = 0
    for cloud in train:
        desc, _ = _timed_describe(cloud, base)
        n_train += 1
        for i, cfg in enumerate(configs):
            if i not in errors:
                try:
                    train_rows[i].append(site_features(desc, cfg)[1])
                except Exception as exc:  # one bad cell must not stop the sweep
                    errors[i] = exc
    banks: dict = {}
    for i, cfg in enumerate(configs):
        if i in errors:
            continue
        try:
            if n_train == 0:
                raise EmptyTrainingSet("no training clouds")
            banks[i] = bank_from_rows(train_rows[i], cfg, bank_cap)
        except Exception as exc:
            errors[i] = exc
    scored: dict = {i: [] for i in banks}
    for rec, cloud in test:
        desc, secs = _timed_describe(cloud, base)
        labels = _labels_of(cloud)
        for i, bank in banks.items():
            if i in errors:
                continue
            try:
                res = score_description(bank, desc, propagate=True)
            except Exception as exc:
                errors[i] = exc
                continue
            scored[i].append(ScoredCloud(Path(rec.get("path", "")).name, _record_type(rec), rec.get("difficulty"),
                                         labels, res.object_score, res.point_scores, secs + res.wall_time_ms / 1e3))
    rows = []
    for i, v in enumerate(values):
        if i in errors:
            log.warning("sweep cell %s=%s failed: %s", axis, v, errors[i])
            rows.append({"axis": axis, "value": v, "o_roc": None, "p_roc": None, "fps": None, "error": str(errors[i])})
            continue
        rep = report_from_scored(scored[i], p_roc_mode=p_roc_mode)
        secs = sum(c.seconds for c in scored[i])
        fps = round(len(scored[i]) / secs, 6) if secs > 0 else None
        rows.append({"axis": axis, "value": v, "o_roc": rep["o_roc"], "p_roc": rep["p_roc"], "fps": fps})
    return rows


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "o_roc", "p_roc", "fps"])
        for r in rows:
            w.writerow([r["axis"], r["value"], fmt(r["o_roc"]), fmt(r["p_roc"]), fmt(r["fps"])])
