"""Command-line pipeline: gen -> synth -> fit -> score -> eval, plus bench and sweep.

Every option can also come from a ``key = value`` file given with
``--config``; precedence is built-in default < config file < flag.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path


from pcdefect.core.cloud import PointCloud
from pcdefect.core.ply import read_ply, write_ply
from pcdefect.core.primitives import SHAPES, sample_primitive
from pcdefect.core.rng import Rng
from pcdefect.detector import DetectorConfig, fit, load_bank, save_bank, score
from pcdefect.errors import EmptyTrainingSet, PcDefectError
from pcdefect.evaluation import benchmark_throughput, evaluate_category, load_manifest, sweep, write_sweep_csv
from pcdefect.synthesis.dataset import generate_dataset, write_json
from pcdefect.synthesis.protocol import DefectType, Difficulty

log = logging.getLogger("pcdefect")


def _int_list(text):
    try:
        vals = [int(v) for v in str(text).replace(" ", ",").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _str_list(text):
    return [v for v in str(text).replace(" ", ",").split(",") if v]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _opt_int(text):
    return None if str(text).lower() in ("", "none") else int(text)


# name -> (converter, default); flags and config-file values go through the same converter
OPTIONS = {
    "seed": (int, 0),
    "jobs": (int, 1),
    "shape": (str, "sphere"),
    "n": (int, 100_000),
    "extent": (float, 1.0),
    "count": (int, 1),
    "out": (str, None),
    "input": (str, None),
    "types": (_str_list, [t.value for t in DefectType]),
    "difficulties": (_str_list, [d.value for d in Difficulty]),
    "per_combo": (int, 30),
    "k_graph": (int, 8),
    "normal_k": (int, 16),
    "direction": (_opt_int, None),
    "train": (str, None),
    "t": (int, 4096),
    "k_l": (int, 128),
    "scales": (_int_list, [40, 80, 120]),
    "sampling": (str, "random"),
    "propagation": (str, "nearest"),
    "bank_cap": (_opt_int, None),
    "bank": (str, None),
    "summary": (str, None),
    "propagate": (_bool, False),
    "manifest": (str, None),
    "normals": (str, None),
    "category": (str, ""),
    "p_roc_mode": (str, "pooled"),
    "warmup": (int, 1),
    "reps": (int, 3),
    "axis": (str, "t"),
    "values": (_int_list, None),
}

COMMAND_KEYS = {
    "gen": ["shape", "n", "extent", "count", "out"],
    "synth": ["input", "out", "types", "difficulties", "per_combo", "k_graph", "normal_k", "direction"],
    "fit": ["train", "out", "t", "k_l", "scales", "normal_k", "sampling", "propagation", "bank_cap"],
    "score": ["bank", "input", "out", "summary", "propagate"],
    "eval": ["bank", "manifest", "normals", "out", "category", "p_roc_mode"],
    "bench": ["bank", "input", "out", "warmup", "reps"],
    "sweep": ["axis", "values", "train", "manifest", "normals", "out", "t", "k_l", "scales", "normal_k",
              "sampling", "propagation", "bank_cap", "p_roc_mode"],
}
REQUIRED = {
    "gen": ["out"],
    "synth": ["input", "out"],
    "fit": ["train", "out"],
    "score": ["bank", "input", "out"],
    "eval": ["bank", "manifest", "out"],
    "bench": ["bank", "input"],
    "sweep": ["values", "train", "manifest", "out"],
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = OPTIONS[key][0](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return out


def _add(p, name, help, **kw):
    conv = OPTIONS[name][0]
    flag = "--" + name.replace("_", "-")
    if conv is _bool:
        p.add_argument(flag, dest=name, action="store_const", const=True, default=None, help=help)
    else:
        p.add_argument(flag, dest=name, type=conv, default=None, help=help, **kw)


def _detector_args(p):
    _add(p, "t", "sampled sites per cloud (default 4096)")
    p.add_argument("--k-L", dest="k_l", type=int, default=None, help=argparse.SUPPRESS)
    _add(p, "k_l", "aggregation neighbourhood size (default 128)")
    _add(p, "scales", "comma-separated neighbour counts (default 40,80,120)")
    _add(p, "normal_k", "neighbours for normal estimation (default 16)")
    _add(p, "sampling", "site sampling: random or fps", choices=["random", "fps"])
    _add(p, "propagation", "score propagation: nearest or idw", choices=["nearest", "idw"])
    _add(p, "bank_cap", "uniformly subsample the bank to at most this many rows")


def build_parser() -> argparse.ArgumentParser:
    def globals_parser(default):
        g = argparse.ArgumentParser(add_help=False, argument_default=default)
        g.add_argument("--seed", type=int, help="master seed (default 0)")
        g.add_argument("--jobs", type=int, help="worker processes; 1 is the reference mode")
        g.add_argument("--config", help="key = value file of defaults")
        g.add_argument("-v", "--verbose", action="store_const", const=True, help="log progress to stderr")
        return g

    common = globals_parser(None)
    # SUPPRESS keeps a subcommand from erasing global flags given before it
    late = globals_parser(argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="pcdefect", parents=[common],
                                     description="Synthesize and detect subtle point-cloud anomalies.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def cmd(name, help):
        # global flags are accepted after the subcommand too
        return sub.add_parser(name, help=help, parents=[late])

    p = cmd("gen", "sample primitive shapes into PLY files")
    _add(p, "shape", "shape name", choices=list(SHAPES))
    _add(p, "n", "points per cloud")
    _add(p, "extent", "size parameter of the shape")
    _add(p, "count", "number of clouds")
    _add(p, "out", "output directory")

    p = cmd("synth", "synthesize a labelled defect dataset from normal clouds")
    p.add_argument("--in", dest="input", default=None, help="directory of normal PLY clouds")
    _add(p, "out", "output directory")
    _add(p, "types", "comma-separated defect types")
    _add(p, "difficulties", "comma-separated difficulty tiers")
    _add(p, "per_combo", "samples per input, type and difficulty")
    _add(p, "k_graph", "neighbours per vertex of the surface graph")
    _add(p, "normal_k", "neighbours for normal estimation")
    _add(p, "direction", "fixed displacement sign (+1/-1); random per sample when omitted")

    p = cmd("fit", "build a prototype bank from normal clouds")
    _add(p, "train", "directory of normal PLY clouds")
    _add(p, "out", "output bank file")
    _detector_args(p)

    p = cmd("score", "score one cloud against a bank")
    _add(p, "bank", "bank file")
    p.add_argument("--in", dest="input", default=None, help="PLY cloud to score")
    _add(p, "out", "scored PLY output")
    _add(p, "summary", "JSON summary path (default: OUT with .json suffix)")
    _add(p, "propagate", "write a score for every input point instead of only the sites")

    p = cmd("eval", "evaluate a bank on a synthesized test set")
    _add(p, "bank", "bank file")
    _add(p, "manifest", "manifest.json written by synth")
    _add(p, "normals", "directory of extra normal test clouds")
    _add(p, "out", "report JSON")
    _add(p, "category", "category name for the report")
    _add(p, "p_roc_mode", "pooled or per_cloud", choices=["pooled", "per_cloud"])

    p = cmd("bench", "time per-cloud inference")
    _add(p, "bank", "bank file")
    p.add_argument("--in", dest="input", default=None, help="PLY file or directory of PLY files")
    _add(p, "out", "stats JSON (default: stdout)")
    _add(p, "warmup", "untimed runs per cloud")
    _add(p, "reps", "timed runs per cloud")

    p = cmd("sweep", "fit and evaluate over a grid of t or k_L")
    _add(p, "axis", "t or k_l", choices=["t", "k_l", "k_L"])
    _add(p, "values", "comma-separated grid values")
    _add(p, "train", "directory of normal training clouds")
    _add(p, "manifest", "manifest.json written by synth")
    _add(p, "normals", "directory of extra normal test clouds")
    _add(p, "out", "CSV output")
    _add(p, "p_roc_mode", "pooled or per_cloud", choices=["pooled", "per_cloud"])
    _detector_args(p)
    return parser


def effective_config(args) -> dict:
    file_cfg = read_config_file(args.config) if args.config else {}
    keys = ["seed", "jobs"] + COMMAND_KEYS[args.command]
    cfg = {}
    for key in keys:
        flag = getattr(args, key, None)
        cfg[key] = flag if flag is not None else file_cfg.get(key, OPTIONS[key][1])
    missing = [k for k in REQUIRED[args.command] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s): "
                         + ", ".join("--" + ("in" if k == "input" else k.replace("_", "-")) for k in missing))
    if cfg.get("axis") == "k_L":
        cfg["axis"] = "k_l"
    return cfg


class UsageError(Exception):
    pass


def _detector_config(cfg) -> DetectorConfig:
    return DetectorConfig(t=cfg["t"], k_l=cfg["k_l"], scales=tuple(cfg["scales"]), seed=cfg["seed"],
                          normal_k=cfg["normal_k"], sampling=cfg["sampling"], propagation=cfg["propagation"])


def _ply_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"directory not found: {d}")
    return sorted(p for p in d.glob("*.ply") if p.is_file())


def _comments(cfg):
    return [f"config {json.dumps(cfg, sort_keys=True)}"]


def cmd_gen(cfg) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(cfg["seed"])
    for i in range(cfg["count"]):
        cloud = sample_primitive(cfg["shape"], cfg["n"], cfg["extent"], rng.child("gen", cfg["shape"], i))
        path = out / f"{cfg['shape']}_{i:03d}.ply"
        write_ply(cloud, path, comments=_comments(cfg))
        print(path)
    return 0


def cmd_synth(cfg) -> int:
    manifest = generate_dataset(
        cfg["input"], cfg["out"], per_type=cfg["per_combo"], types=cfg["types"], difficulties=cfg["difficulties"],
        seed=cfg["seed"], jobs=cfg["jobs"], k_graph=cfg["k_graph"], normal_k=cfg["normal_k"],
        direction=cfg["direction"], run_config=cfg,
    )
    ok = Counter((r["type"], r["difficulty"]) for r in manifest if r["status"] == "ok")
    skipped = sum(r["status"] != "ok" for r in manifest)
    types = [DefectType(t).value for t in cfg["types"]]
    diffs = [Difficulty(d).value for d in cfg["difficulties"]]
    width = max(len(t) for t in types + ["type"])
    print("type".ljust(width) + "".join(f"{d:>8}" for d in diffs))
    for t in types:
        print(t.ljust(width) + "".join(f"{ok[(t, d)]:>8}" for d in diffs))
    print(f"written {sum(ok.values())}, skipped {skipped}, manifest {Path(cfg['out']) / 'manifest.json'}")
    return 0


def _clouds(paths):
    for p in paths:
        c = read_ply(p)
        if c.labels is not None and c.labels.any():
            raise ValueError(f"training cloud {p} has anomalous points")
        yield PointCloud(c.points)


def cmd_fit(cfg) -> int:
    files = _ply_files(cfg["train"])
    if not files:
        raise EmptyTrainingSet(f"no .ply files in {cfg['train']}")
    config = _detector_config(cfg)
    bank = fit(_clouds(files), config, bank_cap=cfg["bank_cap"], files=[str(f) for f in files])
    bank.provenance["run_config"] = cfg
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    save_bank(bank, cfg["out"])
    print(f"bank {cfg['out']}: {len(bank)} rows x {bank.dim}, id {bank.bank_id}")
    return 0


def cmd_score(cfg) -> int:
    bank = load_bank(cfg["bank"])
    cloud = read_ply(cfg["input"])
    res = score(bank, PointCloud(cloud.points), propagate=cfg["propagate"])
    if cfg["propagate"]:
        scored = PointCloud(cloud.points, labels=cloud.labels, scores=res.point_scores)
    else:
        labels = cloud.labels[res.site_indices] if cloud.labels is not None else None
        scored = PointCloud(cloud.points[res.site_indices], labels=labels, scores=res.site_scores)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ply(scored, out, comments=_comments(cfg) + [f"bank_id {bank.bank_id}"])
    summary = {
        "object_score": res.object_score,
        "t": bank.config.t,
        "k_L": bank.config.k_l,
        "scales": list(bank.config.scales),
        "bank_id": bank.bank_id,
        "wall_time_ms": round(res.wall_time_ms, 3),
        "n_points": cloud.n,
        "n_sites": int(res.site_indices.size),
        "config": cfg,
    }
    summary_path = Path(cfg["summary"]) if cfg["summary"] else out.with_suffix(".json")
    write_json(summary_path, summary)
    print(f"object_score {res.object_score:.6f} -> {out}")
    return 0


def cmd_eval(cfg) -> int:
    bank = load_bank(cfg["bank"])
    if not Path(cfg["manifest"]).is_file():
        raise FileNotFoundError(f"manifest not found: {cfg['manifest']}")
    records = load_manifest(cfg["manifest"], cfg["normals"])
    report = evaluate_category(records, bank, cfg["category"], cfg["p_roc_mode"], jobs=cfg["jobs"],
                               run_config={"run": cfg})
    write_json(cfg["out"], report)
    print(f"O-ROC {report['o_roc']}  P-ROC {report['p_roc']}  -> {cfg['out']}")
    return 0


def cmd_bench(cfg) -> int:
    bank = load_bank(cfg["bank"])
    src = Path(cfg["input"])
    files = _ply_files(src) if src.is_dir() else [src]
    if not files:
        raise FileNotFoundError(f"no .ply files in {src}")
    stats = benchmark_throughput(bank, [read_ply(f) for f in files], cfg["warmup"], cfg["reps"])
    stats["config"] = cfg
    text = json.dumps(stats, indent=2, sort_keys=True)
    if cfg["out"]:
        Path(cfg["out"]).write_text(text + "\n")
    print(text)
    return 0


def _test_stream(records):
    for rec in records:
        if rec.get("status", "ok") == "ok":
            yield rec, read_ply(rec["path"])


def cmd_sweep(cfg) -> int:
    files = _ply_files(cfg["train"])
    if not Path(cfg["manifest"]).is_file():
        raise FileNotFoundError(f"manifest not found: {cfg['manifest']}")
    records = load_manifest(cfg["manifest"], cfg["normals"])
    base = _detector_config(cfg)
    rows = sweep(cfg["axis"], cfg["values"], base, _clouds(files), _test_stream(records),
                 cfg["p_roc_mode"], cfg["bank_cap"])
    write_sweep_csv(rows, cfg["out"])
    Path(cfg["out"] + ".json").write_text(json.dumps({"config": cfg, "rows": rows}, indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(f"{r['axis']}={r['value']}: o_roc {r['o_roc']} p_roc {r['p_roc']} fps {r['fps']}")
    return 0


COMMANDS = {"gen": cmd_gen, "synth": cmd_synth, "fit": cmd_fit, "score": cmd_score,
            "eval": cmd_eval, "bench": cmd_bench, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pcdefect: error: {exc}", file=sys.stderr)
        return 2
    except (PcDefectError, OSError, ValueError) as exc:
        print(f"pcdefect {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
