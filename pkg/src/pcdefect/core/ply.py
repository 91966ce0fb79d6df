"""Minimal PLY support for vertex clouds.

Writes binary little-endian with float64 positions/normals, ``uchar anomaly``
and ``float score``. Reads ascii and both binary flavours; only the vertex
element is decoded, elements after it are ignored.
"""

from __future__ import annotations

import os
from typing import Iterable, Optional

import numpy as np

from pcdefect.core.cloud import PointCloud
from pcdefect.errors import MissingProperty, ParseError

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_FORMATS = {"ascii": None, "binary_little_endian": "<", "binary_big_endian": ">"}


def write_ply(cloud: PointCloud, path, comments: Iterable[str] = ()) -> None:
    n = cloud.n
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if cloud.normals is not None:
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
    if cloud.labels is not None:
        fields.append(("anomaly", "u1"))
    if cloud.scores is not None:
        fields.append(("score", "<f4"))
    rec = np.empty(n, dtype=fields)
    rec["x"], rec["y"], rec["z"] = cloud.points.T
    if cloud.normals is not None:
        rec["nx"], rec["ny"], rec["nz"] = cloud.normals.T
    if cloud.labels is not None:
        rec["anomaly"] = cloud.labels.astype(np.uint8)
    if cloud.scores is not None:
        rec["score"] = cloud.scores.astype(np.float32)

    names = {"<f8": "double", "u1": "uchar", "<f4": "float"}
    header = ["ply", "format binary_little_endian 1.0"]
    for c in comments:
        header.append("comment " + " ".join(str(c).split()))
    header.append(f"element vertex {n}")
    header += [f"property {names[t]} {name}" for name, t in fields]
    header.append("end_header")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def _parse_header(fh):
    line_no = 0
    first = fh.readline()
    line_no += 1
    if first.strip() != b"ply":
        raise ParseError("missing 'ply' magic", line=1, offset=0)
    fmt = None
    elements = []
    comments = []
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise ParseError("unexpected end of file inside header", line=line_no, offset=fh.tell())
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ascii header", line=line_no, offset=fh.tell() - len(raw)) from None
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        if key == "format":
            if len(tok) < 2 or tok[1] not in _FORMATS:
                raise ParseError(f"unsupported format {line!r}", line=line_no)
            fmt = tok[1]
        elif key in ("comment", "obj_info"):
            comments.append(line[len(key):].strip())
        elif key == "element":
            if len(tok) != 3:
                raise ParseError(f"bad element line {line!r}", line=line_no)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count {tok[2]!r}", line=line_no) from None
            elements.append({"name": tok[1], "count": count, "props": []})
        elif key == "property":
            if not elements:
                raise ParseError("property before any element", line=line_no)
            if len(tok) == 5 and tok[1] == "list":
                if tok[2] not in _TYPES or tok[3] not in _TYPES:
                    raise ParseError(f"unknown list types in {line!r}", line=line_no)
                elements[-1]["props"].append((tok[4], "list", tok[2], tok[3]))
            elif len(tok) == 3:
                if tok[1] not in _TYPES:
                    raise ParseError(f"unknown property type {tok[1]!r}", line=line_no)
                elements[-1]["props"].append((tok[2], tok[1]))
            else:
                raise ParseError(f"bad property line {line!r}", line=line_no)
        elif key == "end_header":
            break
        else:
            raise ParseError(f"unknown header keyword {key!r}", line=line_no)
    if fmt is None:
        raise ParseError("header lacks a format line", line=line_no)
    return fmt, elements, comments, line_no


def _skip_binary(fh, element, order):
    for prop in element["props"]:
        if prop[1] == "list":
            raise ParseError(f"cannot skip list property in binary element {element['name']!r} before vertex data", offset=fh.tell())
    itemsize = np.dtype([(p[0], order + _TYPES[p[1]]) for p in element["props"]]).itemsize
    fh.seek(itemsize * element["count"], os.SEEK_CUR)


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        fmt, elements, _, line_no = _parse_header(fh)
        order = _FORMATS[fmt]
        vertex = None
        for el in elements:
            if el["name"] == "vertex":
                vertex = el
                break
            if order is None:
                for _ in range(el["count"]):
                    fh.readline()
                    line_no += 1
            else:
                _skip_binary(fh, el, order)
        if vertex is None:
            raise MissingProperty("no vertex element")
        names = [p[0] for p in vertex["props"]]
        for req in ("x", "y", "z"):
            if req not in names:
                raise MissingProperty(f"vertex element lacks property {req!r}")
        if any(p[1] == "list" for p in vertex["props"]):
            raise ParseError("list properties on vertices are not supported", line=line_no)
        n = vertex["count"]
        if order is None:
            data = _read_ascii(fh, vertex, n, line_no)
        else:
            dtype = np.dtype([(p[0], order + _TYPES[p[1]]) for p in vertex["props"]])
            start = fh.tell()
            buf = fh.read(dtype.itemsize * n)
            if len(buf) != dtype.itemsize * n:
                raise ParseError(f"expected {n} vertices, file truncated", offset=start + len(buf))
            data = np.frombuffer(buf, dtype=dtype)
    return _to_cloud(data, names)


def _read_ascii(fh, vertex, n, line_no):
    props = vertex["props"]
    cols = np.empty((n, len(props)))
    for row in range(n):
        raw = fh.readline()
        line_no += 1
        tok = raw.split()
        if len(tok) != len(props):
            raise ParseError(f"expected {len(props)} values, got {len(tok)}", line=line_no)
        try:
            cols[row] = [float(t) for t in tok]
        except ValueError:
            raise ParseError(f"non-numeric value in {raw.strip()!r}", line=line_no) from None
    return {p[0]: cols[:, i] for i, p in enumerate(props)}


def _col(data, name):
    return np.asarray(data[name], dtype=np.float64)


def _to_cloud(data, names) -> PointCloud:
    points = np.stack([_col(data, "x"), _col(data, "y"), _col(data, "z")], axis=1)
    normals: Optional[np.ndarray] = None
    if all(c in names for c in ("nx", "ny", "nz")):
        normals = np.stack([_col(data, "nx"), _col(data, "ny"), _col(data, "nz")], axis=1)
        lengths = np.linalg.norm(normals, axis=1)
        if np.any(lengths == 0):
            normals = None
        elif not np.all(np.abs(lengths - 1.0) <= 1e-6):
            # text formats print normals at reduced precision
            normals = normals / lengths[:, None]
    labels = None
    if "anomaly" in names:
        labels = np.asarray(data["anomaly"]) != 0
    scores = _col(data, "score") if "score" in names else None
    return PointCloud(points, normals, labels, scores)
