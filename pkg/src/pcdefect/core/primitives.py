from __future__ import annotations

import numpy as np

from pcdefect.core.cloud import PointCloud
from pcdefect.core.rng import Rng

SHAPES = ("sphere", "cube-surface", "cylinder-surface", "plane")


def _sphere(gen, n, extent):
    v = gen.standard_normal((n, 3))
    norms = np.linalg.norm(v, axis=1)
    while np.any(norms == 0):
        bad = norms == 0
        v[bad] = gen.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1)
    return extent * v / norms[:, None]


def _cube(gen, n, extent):
    face = gen.integers(0, 6, size=n)
    uv = gen.uniform(-extent, extent, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    side = np.where(face % 2 == 0, -extent, extent)
    for a in range(3):
        sel = axis == a
        others = [b for b in range(3) if b != a]
        pts[sel, a] = side[sel]
        pts[sel, others[0]] = uv[sel, 0]
        pts[sel, others[1]] = uv[sel, 1]
    return pts


def _cylinder(gen, n, extent):
    # lateral area 4*pi*e^2, each cap pi*e^2
    part = gen.choice(3, size=n, p=[4 / 6, 1 / 6, 1 / 6])
    pts = np.empty((n, 3))
    lat = part == 0
    phi = gen.uniform(0.0, 2 * np.pi, size=n)
    z = gen.uniform(-extent, extent, size=n)
    pts[lat, 0] = extent * np.cos(phi[lat])
    pts[lat, 1] = extent * np.sin(phi[lat])
    pts[lat, 2] = z[lat]
    cap = ~lat
    rad = extent * np.sqrt(gen.uniform(0.0, 1.0, size=n))
    pts[cap, 0] = rad[cap] * np.cos(phi[cap])
    pts[cap, 1] = rad[cap] * np.sin(phi[cap])
    pts[cap, 2] = np.where(part[cap] == 1, -extent, extent)
    return pts


def _plane(gen, n, extent):
    pts = np.zeros((n, 3))
    pts[:, :2] = gen.uniform(-extent, extent, size=(n, 2))
    return pts


_SAMPLERS = {"sphere": _sphere, "cube-surface": _cube, "cylinder-surface": _cylinder, "plane": _plane}


def sample_primitive(shape: str, n: int, extent: float, rng: Rng) -> PointCloud:
    """Uniform surface samples of a primitive inside ``[-extent, extent]^3``.

    sphere: radius ``extent``. cube-surface: half-width ``extent``.
    cylinder-surface: radius ``extent``, height ``2*extent``, capped.
    plane: the square ``[-extent, extent]^2`` at z = 0.
    """
    if shape not in _SAMPLERS:
        raise ValueError(f"unknown shape {shape!r}; expected one of {', '.join(SHAPES)}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not extent > 0:
        raise ValueError("extent must be > 0")
    gen = rng.generator("primitive", shape, int(n))
    return PointCloud(_SAMPLERS[shape](gen, int(n), float(extent)))
