from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from pcdefect.core.ply import read_ply, write_ply
from pcdefect.core.rng import Rng
from pcdefect.errors import PcDefectError
from pcdefect.synthesis.defects import DEFAULT_K_GRAPH, DEFAULT_NORMAL_K, prepare, synthesize_defect
from pcdefect.synthesis.protocol import DefectType, Difficulty

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sample_seed(seed: int, stem: str, defect_type: str, difficulty: str, i: int) -> int:
    return Rng(seed).child("sample", stem, defect_type, difficulty, i).seed


def _synthesize_input(args):
    src, out_dir, types, difficulties, per_type, seed, k_graph, normal_k, direction, comments = args
    src = Path(src)
    out_dir = Path(out_dir)
    records = []
    try:
        ctx = prepare(read_ply(src), k_graph=k_graph, normal_k=normal_k)
    except (PcDefectError, OSError, ValueError) as exc:
        log.warning("skipping input %s: %s", src, exc)
        for dt in types:
            for df in difficulties:
                for i in range(per_type):
                    records.append(_skip(src, dt, df, i, sample_seed(seed, src.stem, dt, df, i), exc))
        return records
    for dt in types:
        for df in difficulties:
            for i in range(per_type):
                s = sample_seed(seed, src.stem, dt, df, i)
                name = f"{src.stem}_{dt}_{df}_{i:03d}"
                try:
                    cloud, spec = synthesize_defect(ctx.cloud, dt, df, Rng(s), context=ctx, direction=direction)
                except PcDefectError as exc:
                    log.warning("sample %s skipped: %s", name, exc)
                    records.append(_skip(src, dt, df, i, s, exc))
                    continue
                ply_path = out_dir / f"{name}.ply"
                write_ply(cloud, ply_path, comments=comments)
                rec = {
                    "status": "ok",
                    "path": ply_path.name,
                    "source": src.name,
                    "index": i,
                    "n_points": cloud.n,
                    **{k: v for k, v in spec.to_record().items()},
                }
                write_json(out_dir / f"{name}.json", rec)
                records.append(rec)
    return records


def _skip(src, dt, df, i, s, exc):
    return {
        "status": "skipped",
        "source": Path(src).name,
        "type": dt,
        "difficulty": df,
        "index": i,
        "seed": s,
        "error": f"{type(exc).__name__}: {exc}",
    }


def generate_dataset(
    normals_dir,
    output_dir,
    per_type: int = 30,
    types: Sequence[str] = tuple(t.value for t in DefectType),
    difficulties: Sequence[str] = tuple(d.value for d in Difficulty),
    seed: int = 0,
    jobs: int = 1,
    k_graph: int = DEFAULT_K_GRAPH,
    normal_k: int = DEFAULT_NORMAL_K,
    direction: Optional[int] = None,
    run_config: Optional[dict] = None,
) -> list:
    """Synthesize ``per_type`` defects for every input cloud, type and tier.

    Writes one labelled PLY and one JSON sidecar per sample plus
    ``manifest.json`` (an array of records, skipped samples included).
    """
    normals_dir, output_dir = Path(normals_dir), Path(output_dir)
    if not normals_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {normals_dir}")
    types = [DefectType(t).value for t in types]
    difficulties = [Difficulty(d).value for d in difficulties]
    output_dir.mkdir(parents=True, exist_ok=True)
    inputs = sorted(p for p in normals_dir.glob("*.ply") if p.is_file())
    if not inputs:
        log.warning("no .ply files in %s", normals_dir)
    comments = [f"config {json.dumps(run_config, sort_keys=True)}"] if run_config else []
    tasks = [
        (str(p), str(output_dir), types, difficulties, int(per_type), int(seed), k_graph, normal_k, direction, comments)
        for p in inputs
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_synthesize_input, tasks))
    else:
        chunks = [_synthesize_input(t) for t in tasks]
    manifest = [rec for chunk in chunks for rec in chunk]
    write_json(output_dir / MANIFEST_NAME, manifest)
    return manifest
