"""Core geometric types: triangle meshes with UV atlases, cameras, textures.

Coordinate conventions
----------------------
World space is right-handed with +z up (rooms stand on the xy plane).
Cameras look from `position` toward `look_at`; view space puts the viewing
direction on -z, so view depth is the positive distance along the view axis.
Screen space has x growing right and y growing down, with pixel centers at
integer coordinates (pixel (0, 0) center is at screen position (0.0, 0.0)).

UV space maps u to texture columns and v to texture rows, v = 0 at the top
row; texel (i, j) covers uv = ((j + 0.5) / W, (i + 0.5) / H) at its center.
Wavefront OBJ files use v = 0 at the bottom, so OBJ I/O flips v.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError

_DEGENERATE_AREA = 1e-12


@dataclass
class Mesh:
    """Triangle mesh with a per-face-corner UV atlas and instance labels.

    vertices: (V, 3) float64 positions in scene units.
    faces: (F, 3) int32 vertex indices, counter-clockwise seen from outside.
    uv: (F, 3, 2) float64 per-corner UV in [0, 1]^2.
    face_instance: (F,) int32 instance id per face.
    face_normals: (F, 3) float64 unit outward normals, derived from winding.
    """

    vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray
    face_instance: np.ndarray
    face_normals: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        self.uv = np.ascontiguousarray(self.uv, dtype=np.float64)
        self.face_instance = np.ascontiguousarray(self.face_instance, dtype=np.int32)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ConfigError("face index out of range")
        if self.face_normals is None:
            self.face_normals = compute_face_normals(self.vertices, self.faces)
        self.validate()

    @property
    def num_faces(self) -> int:
        return int(self.faces.shape[0])

    def validate(self):
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ConfigError("face index out of range")
        if self.uv.shape != (self.num_faces, 3, 2):
            raise ConfigError(f"uv shape {self.uv.shape} != ({self.num_faces}, 3, 2)")
        if self.uv.size and (self.uv.min() < -1e-9 or self.uv.max() > 1.0 + 1e-9):
            raise ConfigError("UV coordinates outside [0, 1]")
        if self.face_instance.shape != (self.num_faces,):
            raise ConfigError("face_instance length mismatch")
        norms = np.linalg.norm(self.face_normals, axis=1)
        if self.num_faces and not np.all(np.abs(norms - 1.0) < 1e-6):
            raise ConfigError("degenerate face (zero area) in mesh")

    def corners(self) -> np.ndarray:
        """(F, 3, 3) world positions of the three corners of each face."""
        return self.vertices[self.faces]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def instance_ids(self) -> np.ndarray:
        return np.unique(self.face_instance)

    def submesh(self, instance_id: int) -> "Mesh":
        """Faces of one instance, re-indexed onto their own vertex set."""
        keep = np.flatnonzero(self.face_instance == instance_id)
        if keep.size == 0:
            raise ConfigError(f"instance {instance_id} has no faces")
        old_faces = self.faces[keep]
        used, inverse = np.unique(old_faces, return_inverse=True)
        return Mesh(
            vertices=self.vertices[used],
            faces=inverse.reshape(-1, 3),
            uv=self.uv[keep],
            face_instance=self.face_instance[keep],
            face_normals=self.face_normals[keep],
        )


def compute_face_normals(vertices, faces) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)[np.asarray(faces, dtype=np.int64)]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    length = np.linalg.norm(n, axis=1, keepdims=True)
    if len(n) and length.min() < _DEGENERATE_AREA:
        raise ConfigError("degenerate face (zero area) in mesh")
    return n / length


def merge_meshes(parts: list[tuple[Mesh, int]]) -> Mesh:
    """Concatenate (mesh, instance_id) parts into one scene mesh.

    UVs are kept as-is; callers that need disjoint atlas regions should run
    pack_instance_charts first.
    """
    verts, faces, uv, inst, normals = [], [], [], [], []
    offset = 0
    for mesh, instance_id in parts:
        verts.append(mesh.vertices)
        faces.append(mesh.faces + offset)
        uv.append(mesh.uv)
        inst.append(np.full(mesh.num_faces, instance_id, dtype=np.int32))
        normals.append(mesh.face_normals)
        offset += len(mesh.vertices)
    return Mesh(
        vertices=np.concatenate(verts),
        faces=np.concatenate(faces),
        uv=np.concatenate(uv),
        face_instance=np.concatenate(inst),
        face_normals=np.concatenate(normals),
    )


def pack_instance_charts(parts: list[tuple[Mesh, int]], margin: float = 0.01) -> Mesh:
    """Merge instance meshes, remapping each one's [0,1]^2 UV into its own
    grid cell so the scene atlas stays non-overlapping across instances."""
    grid = int(np.ceil(np.sqrt(len(parts))))
    cell = 1.0 / grid
    remapped = []
    for k, (mesh, instance_id) in enumerate(parts):
        cx, cy = (k % grid) * cell, (k // grid) * cell
        scale = cell * (1.0 - 2.0 * margin)
        uv = mesh.uv * scale + np.array([cx + cell * margin, cy + cell * margin])
        remapped.append(
            (
                Mesh(mesh.vertices, mesh.faces, uv, mesh.face_instance, mesh.face_normals),
                instance_id,
            )
        )
    return merge_meshes(remapped)


@dataclass
class Camera:
    """Pinhole perspective camera."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_degrees: float
    width: int
    height: int
    near: float = 0.01
    far: float = 1e4

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if not (0.0 < self.fov_degrees < 180.0):
            raise ConfigError(f"fov {self.fov_degrees} outside (0, 180)")
        if not (0.0 < self.near < self.far):
            raise ConfigError("camera requires 0 < near < far")
        fwd = self.look_at - self.position
        if np.linalg.norm(fwd) < 1e-12:
            raise ConfigError("camera position equals look_at")
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        if np.linalg.norm(right) < 1e-9:
            raise ConfigError("camera up vector parallel to view direction")
        right = right / np.linalg.norm(right)
        self._forward = fwd
        self._right = right
        self._up = np.cross(right, fwd)
        half_h = np.tan(np.radians(self.fov_degrees) / 2.0)
        self._half_h = half_h
        self._half_w = half_h * self.width / self.height

    @property
    def forward(self) -> np.ndarray:
        return self._forward

    def view_depth(self, points: np.ndarray) -> np.ndarray:
        """Positive distance along the view axis; points: (..., 3)."""
        return (points - self.position) @ self._forward

    def rays_at(self, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        """Unnormalized ray directions through pixel centers (ix, iy), with
        unit forward component so view depth equals the ray parameter."""
        ndc_x = (np.asarray(ix, dtype=np.float64) + 0.5) * (2.0 / self.width) - 1.0
        ndc_y = 1.0 - (np.asarray(iy, dtype=np.float64) + 0.5) * (2.0 / self.height)
        return (
            self._forward
            + ndc_x[..., None] * (self._half_w * self._right)
            + ndc_y[..., None] * (self._half_h * self._up)
        )

    def project(self, points: np.ndarray):
        """Project world points to (px, py, depth) in pixel-center coords.

        Points at or behind the camera plane (depth <= 0) get non-finite
        pixel coordinates; callers must mask on depth.
        """
        rel = points - self.position
        d = rel @ self._forward
        x = rel @ self._right
        y = rel @ self._up
        with np.errstate(divide="ignore", invalid="ignore"):
            ndc_x = x / (d * self._half_w)
            ndc_y = y / (d * self._half_h)
        px = (ndc_x + 1.0) * 0.5 * self.width - 0.5
        py = (1.0 - (ndc_y + 1.0) * 0.5) * self.height - 0.5
        return px, py, d

    def cache_key(self) -> tuple:
        return (
            tuple(self.position),
            tuple(self.look_at),
            tuple(self.up),
            self.fov_degrees,
            self.width,
            self.height,
            self.near,
            self.far,
        )


@dataclass
class TextureMap:
    """UV-space texel grid with per-texel coverage/confidence weight."""

    texels: np.ndarray  # (H, W, C) float32
    weight: np.ndarray  # (H, W) float32 in [0, 1]

    def __post_init__(self):
        self.texels = np.ascontiguousarray(self.texels, dtype=np.float32)
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        if self.texels.shape[:2] != self.weight.shape:
            raise ConfigError("texture/weight resolution mismatch")

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 3) -> "TextureMap":
        return cls(
            np.zeros((height, width, channels), dtype=np.float32),
            np.zeros((height, width), dtype=np.float32),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.texels.shape[:2]

    def copy(self) -> "TextureMap":
        return TextureMap(self.texels.copy(), self.weight.copy())

    def assert_finite(self):
        if not np.all(np.isfinite(self.texels)):
            raise ValueError("texture contains non-finite texels")


@dataclass
class ViewRenderBundle:
    """Everything one camera sees: color, depth, per-pixel view alignment."""

    color: np.ndarray  # (H, W, C) float32
    depth: np.ndarray  # (H, W) float64, scene units, background = +inf
    similarity: np.ndarray  # (H, W) float32 in [0, 1]
    foreground_mask: np.ndarray  # (H, W) bool
    face_id: np.ndarray  # (H, W) int32, background = -1


# ---------------------------------------------------------------------------
# Image I/O
# ---------------------------------------------------------------------------

def quantize_to_bytes(values: np.ndarray) -> np.ndarray:
    """Map float [0,1] to uint8 with round-half-away, the engine's PNG rule."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_png(path, values: np.ndarray):
    arr = quantize_to_bytes(values)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def load_png(path) -> np.ndarray:
    """Load a PNG as float32 in [0, 1]; always returns (H, W, 3)."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


def save_float_image(path, values: np.ndarray):
    """Lossless float32 dump for intermediate texel data (.npy container)."""
    np.save(path, np.asarray(values, dtype=np.float32))


# ---------------------------------------------------------------------------
# Wavefront OBJ
# ---------------------------------------------------------------------------

def load_obj(path, instance_id: int = 0) -> Mesh:
    """Load a triangle/polygon OBJ with per-corner UVs (fan-triangulated).

    OBJ's v axis points up, so v is flipped into the engine's row-down
    convention. Faces without vt references are rejected.
    """
    positions, texcoords = [], []
    tri_verts, tri_uvs = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                texcoords.append([float(parts[1]), float(parts[2])])
            elif parts[0] == "f":
                refs = []
                for token in parts[1:]:
                    fields = token.split("/")
                    vi = int(fields[0])
                    ti = int(fields[1]) if len(fields) > 1 and fields[1] else 0
                    if ti == 0:
                        raise ConfigError(f"{path}: face without UV reference")
                    refs.append((vi, ti))
                for a, b in zip(refs[1:-1], refs[2:]):
                    tri_verts.append((refs[0][0], a[0], b[0]))
                    tri_uvs.append((refs[0][1], a[1], b[1]))
    if not tri_verts:
        raise ConfigError(f"{path}: no faces")
    positions = np.asarray(positions, dtype=np.float64)
    texcoords = np.asarray(texcoords, dtype=np.float64)

    def resolve(idx, count):
        idx = np.asarray(idx, dtype=np.int64)
        return np.where(idx > 0, idx - 1, count + idx)

    faces = resolve(np.asarray(tri_verts), len(positions)).astype(np.int32)
    uv_idx = resolve(np.asarray(tri_uvs), len(texcoords))
    uv = texcoords[uv_idx]
    uv[..., 1] = 1.0 - uv[..., 1]
    uv = np.clip(uv, 0.0, 1.0)
    return Mesh(
        vertices=positions,
        faces=faces,
        uv=uv,
        face_instance=np.full(len(faces), instance_id, dtype=np.int32),
    )


def save_obj(path, mesh: Mesh):
    """Write a mesh with per-corner UVs (v flipped back to OBJ convention)."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for corner_uv in mesh.uv.reshape(-1, 2):
        lines.append(f"vt {corner_uv[0]:.9g} {1.0 - corner_uv[1]:.9g}")
    for f_idx, face in enumerate(mesh.faces):
        t = 3 * f_idx
        lines.append(
            f"f {face[0] + 1}/{t + 1} {face[1] + 1}/{t + 2} {face[2] + 1}/{t + 3}"
        )
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
