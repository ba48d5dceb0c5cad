"""Pure-NumPy rasterization and occlusion kernels.

Fallback used when the compiled extension is unavailable. Formulas and
tie-breaking rules are kept identical to texsync._kernels so the two backends
produce bit-identical tables (the extension is built with FP contraction off
for the same reason). Triangles are processed in index order: the z-buffer
keeps the first writer on exact depth ties, UV rasterization keeps the last.
"""

from __future__ import annotations

import numpy as np

_PARALLEL_EPS = 1e-14
_SEGMENT_T_MIN = 1e-9
_INTERIOR_EPS = 1e-9


def rasterize_frame(tsx, tsy, td, tb, tface, height, width):
    """Z-buffered perspective rasterization of pre-clipped triangles.

    tsx, tsy: (K, 3) screen coords; td: (K, 3) positive view depths;
    tb: (K, 3, 3) barycentric coords of each clipped vertex within its
    original face; tface: (K,) original face indices.

    Returns (face_id int32, depth float64 with +inf background,
    bary float64 (H, W, 3) of the original face).
    """
    face_id = np.full((height, width), -1, dtype=np.int32)
    depth = np.full((height, width), np.inf, dtype=np.float64)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    for k in range(len(tface)):
        x0, x1, x2 = tsx[k]
        y0, y1, y2 = tsy[k]
        lo_x = max(0, int(np.ceil(min(x0, x1, x2))))
        hi_x = min(width - 1, int(np.floor(max(x0, x1, x2))))
        lo_y = max(0, int(np.ceil(min(y0, y1, y2))))
        hi_y = min(height - 1, int(np.floor(max(y0, y1, y2))))
        if lo_x > hi_x or lo_y > hi_y:
            continue
        px = np.arange(lo_x, hi_x + 1, dtype=np.float64)[None, :]
        py = np.arange(lo_y, hi_y + 1, dtype=np.float64)[:, None]
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
        wsum = w0 + w1 + w2
        inside &= wsum != 0
        if not inside.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            b0 = w0 / wsum
            b1 = w1 / wsum
            b2 = w2 / wsum
            inv_d = b0 / td[k, 0] + b1 / td[k, 1] + b2 / td[k, 2]
            d = 1.0 / inv_d
        window = np.s_[lo_y : hi_y + 1, lo_x : hi_x + 1]
        win = inside & (d < depth[window])
        if not win.any():
            continue
        ob = (
            (b0 / td[k, 0])[..., None] * tb[k, 0]
            + (b1 / td[k, 1])[..., None] * tb[k, 1]
            + (b2 / td[k, 2])[..., None] * tb[k, 2]
        ) * d[..., None]
        depth[window] = np.where(win, d, depth[window])
        face_id[window] = np.where(win, tface[k], face_id[window])
        bary[window] = np.where(win[..., None], ob, bary[window])
    return face_id, depth, bary


def rasterize_uv(tx, ty, height, width):
    """Affine 2D rasterization of UV triangles onto the texel grid.

    tx, ty: (F, 3) texel-space corner coordinates. Returns (face_id int32,
    bary float64, claims int32 with the per-texel cover count). Overlapping
    faces: the highest face index wins (last writer). Claims only count
    strictly interior covers, so texels on edges shared between adjacent
    charts are not reported as atlas overlap.
    """
    face_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    claims = np.zeros((height, width), dtype=np.int32)
    for k in range(len(tx)):
        x0, x1, x2 = tx[k]
        y0, y1, y2 = ty[k]
        lo_x = max(0, int(np.ceil(min(x0, x1, x2))))
        hi_x = min(width - 1, int(np.floor(max(x0, x1, x2))))
        lo_y = max(0, int(np.ceil(min(y0, y1, y2))))
        hi_y = min(height - 1, int(np.floor(max(y0, y1, y2))))
        if lo_x > hi_x or lo_y > hi_y:
            continue
        px = np.arange(lo_x, hi_x + 1, dtype=np.float64)[None, :]
        py = np.arange(lo_y, hi_y + 1, dtype=np.float64)[:, None]
        w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
        w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside = ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
        wsum = w0 + w1 + w2
        inside &= wsum != 0
        if not inside.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.stack([w0 / wsum, w1 / wsum, w2 / wsum], axis=-1)
        window = np.s_[lo_y : hi_y + 1, lo_x : hi_x + 1]
        interior = inside & (b.min(axis=-1) > _INTERIOR_EPS)
        claims[window] += interior
        face_id[window] = np.where(inside, k, face_id[window])
        bary[window] = np.where(inside[..., None], b, bary[window])
    return face_id, bary, claims


def segment_occlusion(origin, targets, px, py, tmax, verts, faces, bbox):
    """True where the open segment origin -> target is blocked by any face.

    A face blocks a target when the Moller-Trumbore intersection parameter t
    satisfies t_min < t < tmax[target]. px/py are the targets' projected
    pixel coordinates and bbox (F, 4) the faces' conservative projected
    bounds [xmin, ymin, xmax, ymax]; a face is only tested against the
    targets inside its bounds (any real hit projects inside them).
    """
    origin = np.asarray(origin, dtype=np.float64)
    m = len(targets)
    occluded = np.zeros(m, dtype=bool)
    if m == 0:
        return occluded
    # Componentwise arithmetic (no BLAS dot/cross) keeps the accumulation
    # order identical to the compiled kernel.
    dx = targets[:, 0] - origin[0]
    dy = targets[:, 1] - origin[1]
    dz = targets[:, 2] - origin[2]
    for f in range(len(faces)):
        cand = np.flatnonzero(
            ~occluded
            & (px >= bbox[f, 0])
            & (px <= bbox[f, 2])
            & (py >= bbox[f, 1])
            & (py <= bbox[f, 3])
        )
        if cand.size == 0:
            continue
        v0 = verts[faces[f, 0]]
        e1 = verts[faces[f, 1]] - v0
        e2 = verts[faces[f, 2]] - v0
        cdx, cdy, cdz = dx[cand], dy[cand], dz[cand]
        pvx = cdy * e2[2] - cdz * e2[1]
        pvy = cdz * e2[0] - cdx * e2[2]
        pvz = cdx * e2[1] - cdy * e2[0]
        det = pvx * e1[0] + pvy * e1[1] + pvz * e1[2]
        ok = np.abs(det) > _PARALLEL_EPS
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
        tv = origin - v0
        u = (pvx * tv[0] + pvy * tv[1] + pvz * tv[2]) * inv
        qvx = tv[1] * e1[2] - tv[2] * e1[1]
        qvy = tv[2] * e1[0] - tv[0] * e1[2]
        qvz = tv[0] * e1[1] - tv[1] * e1[0]
        v = (cdx * qvx + cdy * qvy + cdz * qvz) * inv
        t = (e2[0] * qvx + e2[1] * qvy + e2[2] * qvz) * inv
        hit = ok & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0)
        hit &= (t > _SEGMENT_T_MIN) & (t < tmax[cand])
        occluded[cand[hit]] = True
    return occluded
