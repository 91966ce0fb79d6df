from pcdefect.synthesis.dataset import generate_dataset
from pcdefect.synthesis.defects import (
    DefectSpec,
    RegionMask,
    SynthesisContext,
    distort,
    draw_spec,
    expand_region,
    prepare,
    select_anchors,
    synthesize_defect,
)
from pcdefect.synthesis.graph import GeodesicPath, KnnGraph, build_graph, dijkstra, geodesic_path
from pcdefect.synthesis.protocol import DefectType, Difficulty, ProtocolRanges, protocol_ranges

__all__ = [
    "DefectSpec",
    "DefectType",
    "Difficulty",
    "GeodesicPath",
    "KnnGraph",
    "ProtocolRanges",
    "RegionMask",
    "SynthesisContext",
    "build_graph",
    "dijkstra",
    "distort",
    "draw_spec",
    "expand_region",
    "generate_dataset",
    "geodesic_path",
    "prepare",
    "protocol_ranges",
    "select_anchors",
    "synthesize_defect",
]
