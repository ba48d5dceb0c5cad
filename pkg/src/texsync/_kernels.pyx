# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled rasterization and occlusion kernels.

Mirrors texsync._kernels_np operation for operation; expression order matches
the NumPy fallback so results are bit-identical (built with -ffp-contract=off
to block FMA contraction). The occlusion query adds a screen-space tile grid
so each texel only tests faces whose projected bounds overlap its tile.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, floor, fabs, INFINITY

cnp.import_array()

DEF PARALLEL_EPS = 1e-14
DEF SEGMENT_T_MIN = 1e-9
DEF INTERIOR_EPS = 1e-9
DEF TILE = 16


def rasterize_frame(double[:, ::1] tsx, double[:, ::1] tsy, double[:, ::1] td,
                    double[:, :, ::1] tb, int[::1] tface, int height, int width):
    face_arr = np.full((height, width), -1, dtype=np.int32)
    depth_arr = np.full((height, width), INFINITY, dtype=np.float64)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    cdef int[:, ::1] face_id = face_arr
    cdef double[:, ::1] depth = depth_arr
    cdef double[:, :, ::1] bary = bary_arr

    cdef Py_ssize_t k, x, y
    cdef int lo_x, hi_x, lo_y, hi_y
    cdef double x0, x1, x2, y0, y1, y2, mn, mx
    cdef double px, py, w0, w1, w2, wsum, b0, b1, b2, inv_d, d
    cdef double r0, r1, r2
    cdef bint inside
    for k in range(tface.shape[0]):
        x0 = tsx[k, 0]; x1 = tsx[k, 1]; x2 = tsx[k, 2]
        y0 = tsy[k, 0]; y1 = tsy[k, 1]; y2 = tsy[k, 2]
        mn = min(x0, min(x1, x2)); mx = max(x0, max(x1, x2))
        lo_x = max(0, <int>ceil(mn)); hi_x = min(width - 1, <int>floor(mx))
        mn = min(y0, min(y1, y2)); mx = max(y0, max(y1, y2))
        lo_y = max(0, <int>ceil(mn)); hi_y = min(height - 1, <int>floor(mx))
        if lo_x > hi_x or lo_y > hi_y:
            continue
        for y in range(lo_y, hi_y + 1):
            py = <double>y
            for x in range(lo_x, hi_x + 1):
                px = <double>x
                w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                inside = ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | \
                         ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
                wsum = w0 + w1 + w2
                if not inside or wsum == 0:
                    continue
                b0 = w0 / wsum; b1 = w1 / wsum; b2 = w2 / wsum
                inv_d = b0 / td[k, 0] + b1 / td[k, 1] + b2 / td[k, 2]
                d = 1.0 / inv_d
                if d < depth[y, x]:
                    depth[y, x] = d
                    face_id[y, x] = tface[k]
                    r0 = b0 / td[k, 0]; r1 = b1 / td[k, 1]; r2 = b2 / td[k, 2]
                    bary[y, x, 0] = (r0 * tb[k, 0, 0] + r1 * tb[k, 1, 0] + r2 * tb[k, 2, 0]) * d
                    bary[y, x, 1] = (r0 * tb[k, 0, 1] + r1 * tb[k, 1, 1] + r2 * tb[k, 2, 1]) * d
                    bary[y, x, 2] = (r0 * tb[k, 0, 2] + r1 * tb[k, 1, 2] + r2 * tb[k, 2, 2]) * d
    return face_arr, depth_arr, bary_arr


def rasterize_uv(double[:, ::1] tx, double[:, ::1] ty, int height, int width):
    face_arr = np.full((height, width), -1, dtype=np.int32)
    bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    claims_arr = np.zeros((height, width), dtype=np.int32)
    cdef int[:, ::1] face_id = face_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef int[:, ::1] claims = claims_arr

    cdef Py_ssize_t k, x, y
    cdef int lo_x, hi_x, lo_y, hi_y
    cdef double x0, x1, x2, y0, y1, y2, mn, mx
    cdef double px, py, w0, w1, w2, wsum, b0, b1, b2
    cdef bint inside
    for k in range(tx.shape[0]):
        x0 = tx[k, 0]; x1 = tx[k, 1]; x2 = tx[k, 2]
        y0 = ty[k, 0]; y1 = ty[k, 1]; y2 = ty[k, 2]
        mn = min(x0, min(x1, x2)); mx = max(x0, max(x1, x2))
        lo_x = max(0, <int>ceil(mn)); hi_x = min(width - 1, <int>floor(mx))
        mn = min(y0, min(y1, y2)); mx = max(y0, max(y1, y2))
        lo_y = max(0, <int>ceil(mn)); hi_y = min(height - 1, <int>floor(mx))
        if lo_x > hi_x or lo_y > hi_y:
            continue
        for y in range(lo_y, hi_y + 1):
            py = <double>y
            for x in range(lo_x, hi_x + 1):
                px = <double>x
                w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                inside = ((w0 >= 0) & (w1 >= 0) & (w2 >= 0)) | \
                         ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
                wsum = w0 + w1 + w2
                if not inside or wsum == 0:
                    continue
                b0 = w0 / wsum; b1 = w1 / wsum; b2 = w2 / wsum
                if min(b0, min(b1, b2)) > INTERIOR_EPS:
                    claims[y, x] += 1
                face_id[y, x] = <int>k
                bary[y, x, 0] = b0
                bary[y, x, 1] = b1
                bary[y, x, 2] = b2
    return face_arr, bary_arr, claims_arr


def segment_occlusion(double[::1] origin, double[:, ::1] targets,
                      double[::1] px, double[::1] py, double[::1] tmax,
                      double[:, ::1] verts, int[:, ::1] faces,
                      double[:, ::1] bbox):
    cdef Py_ssize_t m = targets.shape[0]
    cdef Py_ssize_t nf = faces.shape[0]
    occluded_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] occluded = occluded_arr
    if m == 0 or nf == 0:
        return occluded_arr.view(bool)

    # Tile grid over the projected extent of the targets.
    cdef double min_px = INFINITY, min_py = INFINITY, max_px = -INFINITY, max_py = -INFINITY
    cdef Py_ssize_t i, f, j
    for i in range(m):
        if px[i] < min_px: min_px = px[i]
        if px[i] > max_px: max_px = px[i]
        if py[i] < min_py: min_py = py[i]
        if py[i] > max_py: max_py = py[i]
    cdef int tiles_x = <int>((max_px - min_px) / TILE) + 1
    cdef int tiles_y = <int>((max_py - min_py) / TILE) + 1
    if tiles_x < 1: tiles_x = 1
    if tiles_y < 1: tiles_y = 1

    # Counting-sort faces into the tiles their bbox overlaps.
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    cdef long long[::1] cnt = counts
    cdef int fx0, fx1, fy0, fy1, txi, tyi
    cdef long long total = 0
    for f in range(nf):
        fx0 = <int>((bbox[f, 0] - min_px) / TILE)
        fx1 = <int>((bbox[f, 2] - min_px) / TILE)
        fy0 = <int>((bbox[f, 1] - min_py) / TILE)
        fy1 = <int>((bbox[f, 3] - min_py) / TILE)
        if fx1 < 0 or fy1 < 0 or fx0 >= tiles_x or fy0 >= tiles_y:
            continue
        fx0 = max(fx0, 0); fy0 = max(fy0, 0)
        fx1 = min(fx1, tiles_x - 1); fy1 = min(fy1, tiles_y - 1)
        for tyi in range(fy0, fy1 + 1):
            for txi in range(fx0, fx1 + 1):
                cnt[tyi * tiles_x + txi + 1] += 1
                total += 1
    for i in range(1, tiles_x * tiles_y + 1):
        cnt[i] += cnt[i - 1]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] bins = np.empty(max(total, 1), dtype=np.int32)
    cdef int[::1] binv = bins
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cursor = counts[:-1].copy()
    cdef long long[::1] cur = cursor
    for f in range(nf):
        fx0 = <int>((bbox[f, 0] - min_px) / TILE)
        fx1 = <int>((bbox[f, 2] - min_px) / TILE)
        fy0 = <int>((bbox[f, 1] - min_py) / TILE)
        fy1 = <int>((bbox[f, 3] - min_py) / TILE)
        if fx1 < 0 or fy1 < 0 or fx0 >= tiles_x or fy0 >= tiles_y:
            continue
        fx0 = max(fx0, 0); fy0 = max(fy0, 0)
        fx1 = min(fx1, tiles_x - 1); fy1 = min(fy1, tiles_y - 1)
        for tyi in range(fy0, fy1 + 1):
            for txi in range(fx0, fx1 + 1):
                binv[cur[tyi * tiles_x + txi]] = <int>f
                cur[tyi * tiles_x + txi] += 1

    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double dx, dy, dz, v0x, v0y, v0z, e1x, e1y, e1z, e2x, e2y, e2z
    cdef double pvx, pvy, pvz, det, inv, tvx, tvy, tvz, u, v, t
    cdef double qvx, qvy, qvz
    cdef long long b0, b1, b
    cdef int tile_idx
    for i in range(m):
        txi = <int>((px[i] - min_px) / TILE)
        tyi = <int>((py[i] - min_py) / TILE)
        if txi < 0: txi = 0
        if tyi < 0: tyi = 0
        if txi >= tiles_x: txi = tiles_x - 1
        if tyi >= tiles_y: tyi = tiles_y - 1
        tile_idx = tyi * tiles_x + txi
        b0 = cnt[tile_idx]; b1 = cnt[tile_idx + 1]
        dx = targets[i, 0] - ox
        dy = targets[i, 1] - oy
        dz = targets[i, 2] - oz
        for b in range(b0, b1):
            f = binv[b]
            if px[i] < bbox[f, 0] or px[i] > bbox[f, 2] or py[i] < bbox[f, 1] or py[i] > bbox[f, 3]:
                continue
            v0x = verts[faces[f, 0], 0]; v0y = verts[faces[f, 0], 1]; v0z = verts[faces[f, 0], 2]
            e1x = verts[faces[f, 1], 0] - v0x
            e1y = verts[faces[f, 1], 1] - v0y
            e1z = verts[faces[f, 1], 2] - v0z
            e2x = verts[faces[f, 2], 0] - v0x
            e2y = verts[faces[f, 2], 1] - v0y
            e2z = verts[faces[f, 2], 2] - v0z
            pvx = dy * e2z - dz * e2y
            pvy = dz * e2x - dx * e2z
            pvz = dx * e2y - dy * e2x
            det = pvx * e1x + pvy * e1y + pvz * e1z
            if fabs(det) <= PARALLEL_EPS:
                continue
            inv = 1.0 / det
            tvx = ox - v0x; tvy = oy - v0y; tvz = oz - v0z
            u = (pvx * tvx + pvy * tvy + pvz * tvz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qvx = tvy * e1z - tvz * e1y
            qvy = tvz * e1x - tvx * e1z
            qvz = tvx * e1y - tvy * e1x
            v = (dx * qvx + dy * qvy + dz * qvz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2x * qvx + e2y * qvy + e2z * qvz) * inv
            if t > SEGMENT_T_MIN and t < tmax[i]:
                occluded[i] = 1
                break
    return occluded_arr.view(bool)
