"""Parametric mesh primitives with ready-made UV charts.

Used by the demo scene writer and handy for tests; real scenes normally
arrive as OBJ files through a manifest.
"""

from __future__ import annotations

import numpy as np

from .geometry import Mesh, merge_meshes


def quad(center, u_axis, v_axis, instance=0, uv_rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Rectangle spanned by u_axis/v_axis; normal follows cross(u, v)."""
    c = np.asarray(center, dtype=np.float64)
    u = np.asarray(u_axis, dtype=np.float64) / 2.0
    v = np.asarray(v_axis, dtype=np.float64) / 2.0
    p00, p10 = c - u - v, c + u - v
    p11, p01 = c + u + v, c - u + v
    u0, v0, u1, v1 = uv_rect
    vertices = np.array([p00, p10, p11, p01])
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    uv = np.array(
        [
            [[u0, v0], [u1, v0], [u1, v1]],
            [[u0, v0], [u1, v1], [u0, v1]],
        ]
    )
    return Mesh(vertices, faces, uv, np.full(2, instance, dtype=np.int32))


def chart_grid(n: int, margin: float = 0.1) -> list:
    """n UV chart rectangles in a near-square grid, shrunk by margin so
    neighboring charts keep a multi-texel gutter."""
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    charts = []
    for k in range(n):
        cx, cy = (k % cols) / cols, (k // cols) / rows
        w, h = 1.0 / cols, 1.0 / rows
        charts.append(
            (cx + w * margin, cy + h * margin, cx + w * (1 - margin), cy + h * (1 - margin))
        )
    return charts


def box(center, size, instance=0, inward=False) -> Mesh:
    """Axis-aligned box of six quads with a six-chart atlas; inward=True
    flips the normals into the box (room envelopes)."""
    c = np.asarray(center, dtype=np.float64)
    s = np.asarray(size, dtype=np.float64) / 2.0
    ex, ey, ez = np.eye(3)
    defs = [
        (ex * s[0], ey * 2 * s[1], ez * 2 * s[2]),
        (-ex * s[0], ez * 2 * s[2], ey * 2 * s[1]),
        (ey * s[1], ez * 2 * s[2], ex * 2 * s[0]),
        (-ey * s[1], ex * 2 * s[0], ez * 2 * s[2]),
        (ez * s[2], ex * 2 * s[0], ey * 2 * s[1]),
        (-ez * s[2], ey * 2 * s[1], ex * 2 * s[0]),
    ]
    charts = chart_grid(6)
    parts = []
    for (offset, ua, va), chart in zip(defs, charts):
        if inward:
            ua = -ua
        parts.append((quad(c + offset, ua, va, instance, chart), instance))
    return merge_meshes(parts)
