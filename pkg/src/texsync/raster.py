"""Software rasterization and UV inverse rendering.

The per-pixel and per-texel inner loops live in a compiled extension
(texsync._kernels) with a pure-NumPy twin (texsync._kernels_np); the active
backend is chosen at import and can be forced with TEXSYNC_KERNELS=
{auto,compiled,python}. Everything around the kernels (clipping, projection,
sampling) is shared NumPy code, so the two backends produce identical tables.

Visibility semantics: a texel is visible from a camera when its surface point
is inside the view frustum and image rectangle, its face is front-facing, and
no front-facing face intersects the camera-to-point segment more than one
depth tolerance (1e-3 x scene diagonal) nearer than the point (back-facing
faces are culled in rendering, so they do not occlude either). The occlusion
test is evaluated exactly along each texel's own ray (tile-accelerated)
rather than against pixel-grid depth samples, which keeps it
silhouette-robust; rendering itself uses a classic per-pixel z-buffer.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_np
from .errors import ConfigError
from .geometry import Camera, Mesh, TextureMap, ViewRenderBundle

logger = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("TEXSYNC_KERNELS", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise ImportError(f"TEXSYNC_KERNELS must be auto|compiled|python, got {_requested}")
if _requested == "compiled" and _compiled is None:
    raise ImportError("TEXSYNC_KERNELS=compiled but the extension is not built")

DEPTH_TOLERANCE_FRACTION = 1e-3  # of the scene bounding-box diagonal
_NEAR_GUARD_FRACTION = 1e-6


def active_backend() -> str:
    if _requested == "python" or _compiled is None:
        return "python"
    return "compiled"


def _kernels_for(backend: str | None):
    name = backend or active_backend()
    if name == "compiled":
        if _compiled is None:
            raise ConfigError("compiled kernels requested but not built")
        return _compiled
    if name == "python":
        return _kernels_np
    raise ConfigError(f"unknown kernel backend {name!r}")


# ---------------------------------------------------------------------------
# Sampling helpers
# ---------------------------------------------------------------------------

def gated_bilinear(values: np.ndarray, gate: np.ndarray, x: np.ndarray, y: np.ndarray,
                   scan_radius: int = 0):
    """Bilinear sample of (H, W, C) values at continuous (x, y), weighting
    each corner by `gate` (0/1). Where all four gates are zero and
    scan_radius > 0, the nearest gated cell within that radius is used;
    otherwise the plain bilinear value. Coordinates are clamped to the grid.
    """
    h, w = values.shape[:2]
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.clip(np.floor(xc).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(yc).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[:, None]
    fy = (yc - y0)[:, None]
    b00 = (1 - fx) * (1 - fy)
    b10 = fx * (1 - fy)
    b01 = (1 - fx) * fy
    b11 = fx * fy
    v00, v10 = values[y0, x0], values[y0, x1]
    v01, v11 = values[y1, x0], values[y1, x1]
    plain = b00 * v00 + b10 * v10 + b01 * v01 + b11 * v11
    g00 = gate[y0, x0][:, None] * b00
    g10 = gate[y0, x1][:, None] * b10
    g01 = gate[y1, x0][:, None] * b01
    g11 = gate[y1, x1][:, None] * b11
    denom = g00 + g10 + g01 + g11
    gated = g00 * v00 + g10 * v10 + g01 * v01 + g11 * v11
    out = np.where(denom > 0, gated / np.where(denom > 0, denom, 1.0), plain)
    if scan_radius > 0:
        empty = np.flatnonzero(denom[:, 0] == 0)
        if empty.size:
            cy0 = np.clip(np.round(yc[empty]).astype(np.int64), 0, h - 1)
            cx0 = np.clip(np.round(xc[empty]).astype(np.int64), 0, w - 1)
            best = np.full(empty.size, np.inf)
            pick = out[empty]
            for dy in range(-scan_radius, scan_radius + 1):
                for dx in range(-scan_radius, scan_radius + 1):
                    iy = np.clip(cy0 + dy, 0, h - 1)
                    ix = np.clip(cx0 + dx, 0, w - 1)
                    okn = gate[iy, ix] > 0
                    dist = (iy - yc[empty]) ** 2 + (ix - xc[empty]) ** 2
                    better = okn & (dist < best)
                    best = np.where(better, dist, best)
                    pick = np.where(better[:, None], values[iy, ix], pick)
            out[empty] = pick
    return out


def _as_gate(mask: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(mask, dtype=np.float64)


def bilinear_corners(x, y, width, height):
    """Bilinear corner index pairs and coefficients for clamped coords."""
    xc = np.clip(x, 0.0, width - 1.0)
    yc = np.clip(y, 0.0, height - 1.0)
    x0 = np.clip(np.floor(xc).astype(np.int64), 0, max(width - 2, 0))
    y0 = np.clip(np.floor(yc).astype(np.int64), 0, max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = (xc - x0)[:, None]
    fy = (yc - y0)[:, None]
    corners = [(y0, x0), (y0, x1), (y1, x0), (y1, x1)]
    coeffs = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    return corners, coeffs


def sample_view_image(image, px, py, corner_gate, fg_gate, fb_iy, fb_ix):
    """Inverse-render sampling with precomputed surface gates.

    Tier 1: bilinear over corners on the texel's own surface patch
    (corner_gate). Tier 2: the precomputed nearest own-surface pixel for
    sub-pixel slivers (fb_iy/fb_ix >= 0). Tier 3: foreground-gated bilinear.
    Tier 4: plain bilinear.
    """
    h, w = image.shape[:2]
    corners, coeffs = bilinear_corners(px, py, w, h)
    plain = np.zeros((len(px), image.shape[2]))
    surf_num = np.zeros_like(plain)
    surf_den = np.zeros((len(px), 1))
    fg_num = np.zeros_like(plain)
    fg_den = np.zeros((len(px), 1))
    for c, (b, (cy, cx)) in enumerate(zip(coeffs, corners)):
        v = image[cy, cx]
        plain += b * v
        surf = corner_gate[:, c : c + 1] * b
        surf_num += surf * v
        surf_den += surf
        fg = fg_gate[:, c : c + 1] * b
        fg_num += fg * v
        fg_den += fg
    out = plain
    use_fg = fg_den[:, 0] > 0
    out = np.where(use_fg[:, None], fg_num / np.where(fg_den > 0, fg_den, 1.0), out)
    has_fb = fb_ix >= 0
    if has_fb.any():
        out = np.where(
            has_fb[:, None],
            image[np.maximum(fb_iy, 0), np.maximum(fb_ix, 0)],
            out,
        )
    use_surf = surf_den[:, 0] > 0
    out = np.where(use_surf[:, None], surf_num / np.where(surf_den > 0, surf_den, 1.0), out)
    return out


# ---------------------------------------------------------------------------
# Triangle clipping against the view depth range
# ---------------------------------------------------------------------------

def _clip_poly_depth(points, attrs, depths, lo, hi):
    """Sutherland-Hodgman clip of a polygon to lo <= depth <= hi.

    points: list of world positions, attrs: parallel list of attribute rows
    (barycentric lineage), depths: view depths. Returns clipped lists.
    """
    for bound, keep_ge in ((lo, True), (hi, False)):
        if not points:
            return [], [], []
        out_p, out_a, out_d = [], [], []
        n = len(points)
        for i in range(n):
            j = (i + 1) % n
            di, dj = depths[i], depths[j]
            in_i = di >= bound if keep_ge else di <= bound
            in_j = dj >= bound if keep_ge else dj <= bound
            if in_i:
                out_p.append(points[i])
                out_a.append(attrs[i])
                out_d.append(di)
            if in_i != in_j:
                s = (bound - di) / (dj - di)
                out_p.append(points[i] + s * (points[j] - points[i]))
                out_a.append(attrs[i] + s * (attrs[j] - attrs[i]))
                out_d.append(bound)
        points, attrs, depths = out_p, out_a, out_d
    return points, attrs, depths


_IDENT_BARY = np.eye(3)


def _clipped_screen_triangles(mesh: Mesh, camera: Camera, face_mask=None):
    """Cull, clip, and project mesh faces for rasterization.

    Returns (tsx, tsy, td, tb, tface) arrays as consumed by the kernels.
    Back-facing triangles are culled; triangles crossing the near/far planes
    are clipped with their original-face barycentric lineage interpolated.
    """
    corners = mesh.corners()
    facing = np.einsum(
        "fi,fi->f", mesh.face_normals, camera.position[None, :] - corners[:, 0]
    )
    keep = facing > 0
    if face_mask is not None:
        keep &= face_mask
    depths = camera.view_depth(corners)
    tsx, tsy, td, tb, tface = [], [], [], [], []

    def emit(face_idx, pts, bar, dep):
        px, py, _ = camera.project(np.asarray(pts))
        for a in range(1, len(pts) - 1):
            tri = (0, a, a + 1)
            tsx.append([px[i] for i in tri])
            tsy.append([py[i] for i in tri])
            td.append([dep[i] for i in tri])
            tb.append([bar[i] for i in tri])
            tface.append(face_idx)

    inside_all = keep & (depths >= camera.near).all(axis=1) & (depths <= camera.far).all(axis=1)
    crossing = keep & ~inside_all & (depths <= camera.far).any(axis=1) & (
        depths >= camera.near
    ).any(axis=1)

    for f in np.flatnonzero(inside_all):
        emit(f, list(corners[f]), list(_IDENT_BARY), list(depths[f]))
    for f in np.flatnonzero(crossing):
        pts, attrs, dep = _clip_poly_depth(
            list(corners[f]), list(_IDENT_BARY), list(depths[f]), camera.near, camera.far
        )
        if len(pts) >= 3:
            emit(f, pts, attrs, dep)

    if not tface:
        shape0 = (0, 3)
        return (
            np.zeros(shape0),
            np.zeros(shape0),
            np.ones(shape0),
            np.zeros((0, 3, 3)),
            np.zeros(0, dtype=np.int32),
        )
    return (
        np.ascontiguousarray(tsx, dtype=np.float64),
        np.ascontiguousarray(tsy, dtype=np.float64),
        np.ascontiguousarray(td, dtype=np.float64),
        np.ascontiguousarray(tb, dtype=np.float64),
        np.ascontiguousarray(tface, dtype=np.int32),
    )


def _face_screen_bounds(mesh: Mesh, camera: Camera) -> np.ndarray:
    """Conservative projected pixel bbox per face for the occlusion query.

    Faces are clipped at a tiny positive depth (not the near plane) so any
    forward portion that could block a segment stays inside its bounds;
    unbounded projections near depth 0 are clamped to the viewport.
    """
    corners = mesh.corners()
    depths = camera.view_depth(corners)
    eps = max(mesh.diagonal(), 1.0) * _NEAR_GUARD_FRACTION
    bounds = np.empty((mesh.num_faces, 4), dtype=np.float64)
    bounds[:, 0:2] = np.inf
    bounds[:, 2:4] = -np.inf
    w, h = float(camera.width), float(camera.height)

    all_front = (depths > eps).all(axis=1)
    idx = np.flatnonzero(all_front)
    if idx.size:
        px, py, _ = camera.project(corners[idx].reshape(-1, 3))
        px = px.reshape(-1, 3)
        py = py.reshape(-1, 3)
        bounds[idx, 0] = px.min(axis=1)
        bounds[idx, 1] = py.min(axis=1)
        bounds[idx, 2] = px.max(axis=1)
        bounds[idx, 3] = py.max(axis=1)
    for f in np.flatnonzero(~all_front & (depths > eps).any(axis=1)):
        pts, _, dep = _clip_poly_depth(
            list(corners[f]), list(_IDENT_BARY), list(depths[f]), eps, np.inf
        )
        if len(pts) < 3:
            continue
        px, py, _ = camera.project(np.asarray(pts))
        bounds[f] = (px.min(), py.min(), px.max(), py.max())
    # Pad for FP slack, then clamp to the viewport (targets always project
    # inside it, so clamping never drops a relevant face).
    pad = 0.01
    bounds[:, 0] = np.maximum(bounds[:, 0] - pad, -1.0)
    bounds[:, 1] = np.maximum(bounds[:, 1] - pad, -1.0)
    bounds[:, 2] = np.minimum(bounds[:, 2] + pad, w)
    bounds[:, 3] = np.minimum(bounds[:, 3] + pad, h)
    return bounds


# ---------------------------------------------------------------------------
# Cached projection tables
# ---------------------------------------------------------------------------

@dataclass
class AtlasTable:
    """Camera-independent texel geometry: which face owns each texel and
    where that texel sits on the surface."""

    face_id: np.ndarray  # (Ht, Wt) int32, -1 where uncharted
    bary: np.ndarray  # (Ht, Wt, 3)
    world: np.ndarray  # (Ht, Wt, 3)
    instance: np.ndarray  # (Ht, Wt) int32, -1 where uncharted
    overlap_count: int


def build_atlas_table(mesh: Mesh, texture_shape, backend=None) -> AtlasTable:
    ht, wt = texture_shape
    kern = _kernels_for(backend)
    tx = np.ascontiguousarray(mesh.uv[..., 0] * wt - 0.5)
    ty = np.ascontiguousarray(mesh.uv[..., 1] * ht - 0.5)
    face_id, bary, claims = kern.rasterize_uv(tx, ty, ht, wt)
    overlap = int(np.count_nonzero(claims > 1))
    if overlap:
        logger.warning(
            "UV atlas overlap: %d texels claimed by more than one face "
            "(last writer wins)",
            overlap,
        )
    world = np.zeros((ht, wt, 3), dtype=np.float64)
    charted = face_id >= 0
    if charted.any():
        f = face_id[charted]
        world[charted] = np.einsum("mk,mkd->md", bary[charted], mesh.corners()[f])
    instance = np.where(charted, mesh.face_instance[np.maximum(face_id, 0)], -1).astype(
        np.int32
    )
    return AtlasTable(face_id, bary, world, instance, overlap)


@dataclass
class FrameTable:
    """Per-pixel rasterization of one (mesh, camera) pair."""

    face_id: np.ndarray  # (H, W) int32
    depth: np.ndarray  # (H, W) float64, +inf background
    uv: np.ndarray  # (H, W, 2) float64
    similarity: np.ndarray  # (H, W) float32
    foreground: np.ndarray  # (H, W) bool


def build_frame_table(mesh: Mesh, camera: Camera, backend=None) -> FrameTable:
    kern = _kernels_for(backend)
    tsx, tsy, td, tb, tface = _clipped_screen_triangles(mesh, camera)
    face_id, depth, bary = kern.rasterize_frame(
        tsx, tsy, td, tb, tface, camera.height, camera.width
    )
    fg = face_id >= 0
    uv = np.zeros((camera.height, camera.width, 2), dtype=np.float64)
    sim = np.zeros((camera.height, camera.width), dtype=np.float32)
    if fg.any():
        f = face_id[fg]
        b = bary[fg]
        uv[fg] = np.einsum("mk,mkd->md", b, mesh.uv[f])
        world = np.einsum("mk,mkd->md", b, mesh.corners()[f])
        to_cam = camera.position[None, :] - world
        to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
        sim[fg] = np.clip(
            np.einsum("md,md->m", mesh.face_normals[f], to_cam), 0.0, 1.0
        ).astype(np.float32)
    return FrameTable(face_id, depth, uv, sim, fg)


_UV_MATCH_TEXELS = 1.25  # surface-patch gate: predicted vs rasterized uv
_SLIVER_SCAN_RADIUS = 2  # pixels searched for an own-surface sample


@dataclass
class TexelTable:
    """Per-view texel projection: which texels the camera sees and where."""

    rows: np.ndarray  # (M,) visible texel rows
    cols: np.ndarray  # (M,) visible texel cols
    faces: np.ndarray  # (M,) owning face per visible texel
    px: np.ndarray  # (M,) projected pixel x
    py: np.ndarray  # (M,)
    weight: np.ndarray  # (M,) float32 view-alignment confidence
    weight_image: np.ndarray  # (Ht, Wt) float32 full-atlas weight map
    corner_gate: np.ndarray  # (M, 4) corner lies on the texel's surface patch
    fg_gate: np.ndarray  # (M, 4) corner is foreground
    fb_iy: np.ndarray  # (M,) sliver fallback pixel row, -1 when unused
    fb_ix: np.ndarray  # (M,) sliver fallback pixel col


class _SurfaceMatcher:
    """Tests whether a frame pixel shows the same surface patch as a texel.

    A pixel matches when (a) its rasterized depth equals the texel's face
    plane along that pixel's ray within the depth tolerance, and (b) the
    face's affine UV extension at that intersection agrees with the pixel's
    rasterized UV within a texel-scale radius. (a) separates surfaces in
    depth; (b) separates atlas charts that share a 3D edge, while staying
    permissive across continuous chart interiors.
    """

    def __init__(self, mesh, camera, frame, faces, atlas_shape):
        self.camera = camera
        self.frame = frame
        self.normals = mesh.face_normals[faces]
        v = mesh.corners()[faces]  # (M, 3, 3)
        self.v0 = v[:, 0]
        e = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)  # (M, 3, 2)
        ete = np.einsum("mik,mil->mkl", e, e)
        self.g = np.einsum("mkl,mil->mki", np.linalg.inv(ete), e)  # (M, 2, 3)
        uv = mesh.uv[faces]
        self.uv0 = uv[:, 0]
        self.duv = np.stack([uv[:, 1] - uv[:, 0], uv[:, 2] - uv[:, 0]], axis=1)
        self.plane_num = np.einsum("md,md->m", self.normals, self.v0 - camera.position)
        self.tol = 3.0 * DEPTH_TOLERANCE_FRACTION * mesh.diagonal()
        ht, wt = atlas_shape
        self.uv_scale = np.array([wt, ht], dtype=np.float64)

    def match(self, sel, iy, ix):
        """sel: texel indices (into the matcher arrays); iy/ix: pixel."""
        dirs = self.camera.rays_at(ix, iy)
        ndot = np.einsum("md,md->m", self.normals[sel], dirs)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = self.plane_num[sel] / ndot
            plane_ok = np.abs(self.frame.depth[iy, ix] - t) <= self.tol
            point = self.camera.position + t[:, None] * dirs
            b = np.einsum("mki,mi->mk", self.g[sel], point - self.v0[sel])
            uv_pred = self.uv0[sel] + b[:, 0:1] * self.duv[sel, 0] + b[:, 1:2] * self.duv[sel, 1]
            uv_err = np.abs(uv_pred - self.frame.uv[iy, ix]) * self.uv_scale
        return plane_ok & np.isfinite(t) & (uv_err.max(axis=-1) <= _UV_MATCH_TEXELS)


def build_texel_table(
    mesh: Mesh, camera: Camera, atlas: AtlasTable, backend=None, frame: FrameTable | None = None
) -> TexelTable:
    ht, wt = atlas.face_id.shape
    charted = atlas.face_id >= 0
    rows, cols = np.nonzero(charted)
    faces = atlas.face_id[rows, cols]
    targets = atlas.world[rows, cols]
    normals = mesh.face_normals[faces]

    px, py, d = camera.project(targets)
    to_cam = camera.position[None, :] - targets
    seg_len = np.linalg.norm(to_cam, axis=1)
    cosine = np.einsum("md,md->m", normals, to_cam / seg_len[:, None])
    ok = (
        (d >= camera.near)
        & (d <= camera.far)
        & (px >= 0.0)
        & (px <= camera.width - 1.0)
        & (py >= 0.0)
        & (py <= camera.height - 1.0)
        & (cosine > 0.0)
    )
    idx = np.flatnonzero(ok)
    weight_image = np.zeros((ht, wt), dtype=np.float32)
    if idx.size:
        tol = DEPTH_TOLERANCE_FRACTION * mesh.diagonal()
        tmax = 1.0 - tol / seg_len[idx]
        # Back-facing faces are culled in rendering, so they do not occlude
        # either (closed objects still block via their front shell).
        front = (
            np.einsum(
                "fd,fd->f",
                mesh.face_normals,
                camera.position[None, :] - mesh.corners()[:, 0],
            )
            > 0
        )
        occluder_faces = np.ascontiguousarray(mesh.faces[front])
        bbox = np.ascontiguousarray(_face_screen_bounds(mesh, camera)[front])
        kern = _kernels_for(backend)
        occluded = kern.segment_occlusion(
            np.ascontiguousarray(camera.position),
            np.ascontiguousarray(targets[idx]),
            np.ascontiguousarray(px[idx]),
            np.ascontiguousarray(py[idx]),
            np.ascontiguousarray(tmax),
            mesh.vertices,
            occluder_faces,
            bbox,
        )
        idx = idx[~occluded]
    weight = np.clip(cosine[idx], 0.0, 1.0).astype(np.float32)
    weight_image[rows[idx], cols[idx]] = weight

    if frame is None:
        frame = build_frame_table(mesh, camera, backend=backend)
    vis_faces = faces[idx]
    vis_px, vis_py = px[idx], py[idx]
    m = idx.size
    matcher = _SurfaceMatcher(mesh, camera, frame, vis_faces, (ht, wt))
    all_idx = np.arange(m)
    corner_gate = np.zeros((m, 4), dtype=np.float64)
    fg_gate = np.zeros((m, 4), dtype=np.float64)
    corners, _ = bilinear_corners(vis_px, vis_py, camera.width, camera.height)
    for c, (cy, cx) in enumerate(corners):
        corner_gate[:, c] = matcher.match(all_idx, cy, cx)
        fg_gate[:, c] = frame.foreground[cy, cx]

    # Sub-pixel slivers: visible texels whose 2x2 support shows only other
    # surfaces. Sample the nearest own-surface pixel in a small window.
    fb_iy = np.full(m, -1, dtype=np.int64)
    fb_ix = np.full(m, -1, dtype=np.int64)
    need = np.flatnonzero(~corner_gate.any(axis=1))
    if need.size:
        cy0 = np.clip(np.round(vis_py[need]).astype(np.int64), 0, camera.height - 1)
        cx0 = np.clip(np.round(vis_px[need]).astype(np.int64), 0, camera.width - 1)
        best = np.full(need.size, np.inf)
        r = _SLIVER_SCAN_RADIUS
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                iy = np.clip(cy0 + dy, 0, camera.height - 1)
                ix = np.clip(cx0 + dx, 0, camera.width - 1)
                okm = matcher.match(need, iy, ix)
                dist = (iy - vis_py[need]) ** 2 + (ix - vis_px[need]) ** 2
                better = okm & (dist < best)
                best = np.where(better, dist, best)
                fb_iy[need] = np.where(better, iy, fb_iy[need])
                fb_ix[need] = np.where(better, ix, fb_ix[need])

    return TexelTable(
        rows=rows[idx],
        cols=cols[idx],
        faces=vis_faces,
        px=vis_px,
        py=vis_py,
        weight=weight,
        weight_image=weight_image,
        corner_gate=corner_gate,
        fg_gate=fg_gate,
        fb_iy=fb_iy,
        fb_ix=fb_ix,
    )


# ---------------------------------------------------------------------------
# Projector: cached render / inverse-render for one (mesh, camera) pair
# ---------------------------------------------------------------------------

class Projector:
    """Rasterization tables for one view, reused across sampling steps."""

    def __init__(self, mesh: Mesh, camera: Camera, texture_shape=None, *, atlas=None,
                 backend=None):
        self.mesh = mesh
        self.camera = camera
        self.backend = backend
        self.frame = build_frame_table(mesh, camera, backend=backend)
        self.atlas = atlas
        self.texel: TexelTable | None = None
        if texture_shape is not None:
            if self.atlas is None:
                self.atlas = build_atlas_table(mesh, texture_shape, backend=backend)
            self.texel = build_texel_table(
                mesh, camera, self.atlas, backend=backend, frame=self.frame
            )

    # -- rendering ---------------------------------------------------------
    def render(self, texture: TextureMap) -> ViewRenderBundle:
        frame = self.frame
        h, w = frame.face_id.shape
        channels = texture.texels.shape[2]
        color = np.zeros((h, w, channels), dtype=np.float32)
        if frame.foreground.any():
            uv = frame.uv[frame.foreground]
            ht, wt = texture.shape
            sx = uv[:, 0] * wt - 0.5
            sy = uv[:, 1] * ht - 0.5
            sampled = gated_bilinear(
                texture.texels.astype(np.float64),
                _as_gate(texture.weight > 0),
                sx,
                sy,
                scan_radius=3,
            )
            color[frame.foreground] = sampled.astype(np.float32)
        return ViewRenderBundle(
            color=color,
            depth=frame.depth.copy(),
            similarity=frame.similarity.copy(),
            foreground_mask=frame.foreground.copy(),
            face_id=frame.face_id.copy(),
        )

    # -- inverse rendering ---------------------------------------------------
    def _require_texel(self):
        if self.texel is None:
            raise ConfigError("Projector built without a texture resolution")
        return self.texel

    def inverse_render(self, image: np.ndarray) -> TextureMap:
        """Back-project an image into UV space.

        Visible texels sample the image bilinearly at their projection,
        gated to pixels showing the texel's own surface patch (see
        sample_view_image); their weight is the view-alignment confidence
        evaluated at the texel's own surface point. Everything else stays
        at value 0, weight 0.
        """
        table = self._require_texel()
        image = np.asarray(image)
        if image.ndim == 2:
            image = image[..., None]
        if image.shape[:2] != (self.camera.height, self.camera.width):
            raise ConfigError(
                f"image resolution {image.shape[:2]} != camera "
                f"{(self.camera.height, self.camera.width)}"
            )
        ht, wt = self.atlas.face_id.shape
        out = TextureMap.zeros(ht, wt, image.shape[2])
        if table.rows.size:
            sampled = sample_view_image(
                image.astype(np.float64),
                table.px,
                table.py,
                table.corner_gate,
                table.fg_gate,
                table.fb_iy,
                table.fb_ix,
            )
            out.texels[table.rows, table.cols] = sampled.astype(np.float32)
            out.weight[table.rows, table.cols] = table.weight
        return out

    def weight_map(self) -> TextureMap:
        """The view's merge weights: inverse rendering of the per-pixel
        view-alignment confidence (evaluated exactly per texel)."""
        table = self._require_texel()
        ht, wt = self.atlas.face_id.shape
        out = TextureMap.zeros(ht, wt, 1)
        out.weight = table.weight_image.copy()
        return out


# ---------------------------------------------------------------------------
# Functional API (one-shot, uncached)
# ---------------------------------------------------------------------------

def render(texture: TextureMap, mesh: Mesh, camera: Camera, backend=None) -> ViewRenderBundle:
    return Projector(mesh, camera, backend=backend).render(texture)


def inverse_render(image: np.ndarray, mesh: Mesh, camera: Camera, texture_shape,
                   backend=None) -> TextureMap:
    return Projector(mesh, camera, texture_shape, backend=backend).inverse_render(image)


def weight_map(mesh: Mesh, camera: Camera, texture_shape, backend=None) -> TextureMap:
    return Projector(mesh, camera, texture_shape, backend=backend).weight_map()
