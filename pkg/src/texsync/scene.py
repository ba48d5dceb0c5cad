"""Scene manifest ingestion, camera placement policies, and view prompts.

A scene manifest is a YAML file listing the holistic prompt, a style token,
the room-frame mesh, and the furniture instances:

    prompt: "A Chinese style bedroom"
    style: "Chinese style"
    room: {id: 0, label: "room frame", mesh: "room.obj"}
    instances:
      - {id: 1, label: "single bed", mesh: "bed.obj"}

Mesh paths are relative to the manifest. The scene is +z up; camera rings
are placed in the horizontal plane.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .denoise import ViewGraph
from .errors import ConfigError
from .geometry import Camera, Mesh, load_obj, pack_instance_charts
from .sampler import ViewSet

GLOBAL, ROOM_FRAME, FURNITURE = "global", "room_frame", "furniture"
PROMPT_PIXEL_THRESHOLD = 0.01


@dataclass
class InstanceRecord:
    instance_id: int
    label: str
    mesh_path: str
    mesh: Mesh = field(repr=False, default=None)

    def bounding_box(self):
        return self.mesh.bounding_box()

    def volume(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.prod(np.maximum(hi - lo, 0.0)))


@dataclass
class SceneManifest:
    prompt: str
    style: str
    room: InstanceRecord
    instances: list

    @classmethod
    def load(cls, path) -> "SceneManifest":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed manifest {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: manifest must be a mapping")
        for key in ("prompt", "style", "room"):
            if key not in raw:
                raise ConfigError(f"{path}: missing manifest key {key!r}")
        base = os.path.dirname(os.path.abspath(path))

        def record(entry) -> InstanceRecord:
            for key in ("id", "label", "mesh"):
                if key not in entry:
                    raise ConfigError(f"{path}: instance record missing {key!r}")
            if not str(entry["label"]).strip():
                raise ConfigError(f"{path}: empty instance label")
            mesh_path = os.path.join(base, entry["mesh"])
            if not os.path.exists(mesh_path):
                raise ConfigError(f"{path}: mesh file not found: {mesh_path}")
            mesh = load_obj(mesh_path, instance_id=int(entry["id"]))
            return InstanceRecord(int(entry["id"]), str(entry["label"]), mesh_path, mesh)

        room = record(raw["room"])
        instances = [record(e) for e in raw.get("instances", [])]
        ids = [room.instance_id] + [r.instance_id for r in instances]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"{path}: duplicate instance ids")
        return cls(str(raw["prompt"]), str(raw["style"]), room, instances)

    def records(self) -> list:
        return [self.room] + list(self.instances)

    def labels_by_id(self) -> dict:
        return {r.instance_id: r.label for r in self.records()}

    def build_scene_mesh(self) -> Mesh:
        """Merged scene mesh with per-instance atlas charts packed into
        disjoint regions."""
        parts = [(r.mesh, r.instance_id) for r in self.records()]
        return pack_instance_charts(parts)

    def validate_mesh_ids(self, mesh: Mesh):
        known = {r.instance_id for r in self.records()}
        present = set(int(i) for i in mesh.instance_ids())
        orphans = present - known
        if orphans:
            raise ConfigError(f"mesh contains instance ids not in manifest: {sorted(orphans)}")


# ---------------------------------------------------------------------------
# Camera policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraPolicy:
    """How cameras surround a target box in one pipeline phase.

    global: a horizontal ring at half the shortest horizontal axis, ring
    adjacency. room_frame: the same ring with more views and a wider lens,
    complete adjacency. furniture: a two-elevation ring at 0.95 x the box
    diagonal, complete adjacency.
    """

    phase: str
    count: int
    fov_degrees: float
    width: int = 128
    height: int = 128
    elevations: tuple = (0.0,)
    distance_scale: float = 0.95  # fraction of bbox diagonal (furniture only)
    include_self_in_ring: bool = True

    @classmethod
    def global_phase(cls, resolution=(128, 128), fov=60.0, count=6) -> "CameraPolicy":
        return cls(GLOBAL, count, fov, resolution[0], resolution[1])

    @classmethod
    def room_frame_phase(cls, resolution=(128, 128), fov=80.0, count=12) -> "CameraPolicy":
        return cls(ROOM_FRAME, count, fov, resolution[0], resolution[1])

    @classmethod
    def furniture_phase(cls, resolution=(128, 128), fov=60.0, count=9,
                        elevations=(0.0, 30.0)) -> "CameraPolicy":
        return cls(FURNITURE, count, fov, resolution[0], resolution[1], elevations)


def place_cameras(policy: CameraPolicy, box_lo, box_hi, view_ids=None) -> ViewSet:
    """Evenly spaced azimuth ring(s) looking at the box center."""
    lo = np.asarray(box_lo, dtype=np.float64)
    hi = np.asarray(box_hi, dtype=np.float64)
    extent = hi - lo
    if np.any(extent <= 0):
        raise ConfigError(f"degenerate target box: extent {extent}")
    center = (lo + hi) / 2.0
    if policy.phase in (GLOBAL, ROOM_FRAME):
        radius = 0.5 * min(extent[0], extent[1])
        elevations = [0.0] * policy.count
    elif policy.phase == FURNITURE:
        radius = policy.distance_scale * float(np.linalg.norm(extent))
        elevations = [
            policy.elevations[k % len(policy.elevations)] for k in range(policy.count)
        ]
    else:
        raise ConfigError(f"unknown camera phase {policy.phase!r}")
    if radius <= 0:
        raise ConfigError("camera ring radius collapsed to zero")
    cameras = []
    for k in range(policy.count):
        az = 2.0 * np.pi * k / policy.count
        el = np.radians(elevations[k])
        offset = radius * np.array(
            [np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)]
        )
        cameras.append(
            Camera(
                position=center + offset,
                look_at=center,
                up=(0, 0, 1),
                fov_degrees=policy.fov_degrees,
                width=policy.width,
                height=policy.height,
            )
        )
    if policy.phase == GLOBAL:
        graph = ViewGraph.ring(policy.count, include_self=policy.include_self_in_ring)
    else:
        graph = ViewGraph.complete(policy.count)
    return ViewSet(cameras, graph, view_ids=view_ids)


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------

def instance_pixel_fractions(face_id_image: np.ndarray, face_instance: np.ndarray) -> dict:
    """Fraction of all pixels each instance covers in a rendered view."""
    total = face_id_image.size
    fg = face_id_image >= 0
    out = {}
    if fg.any():
        inst = face_instance[face_id_image[fg]]
        ids, counts = np.unique(inst, return_counts=True)
        out = {int(i): float(c) / total for i, c in zip(ids, counts)}
    return out


def join_labels(labels: list) -> str:
    if len(labels) == 1:
        return labels[0]
    return ", ".join(labels[:-1]) + " and " + labels[-1]


def stage1_view_prompt(manifest: SceneManifest, face_id_image: np.ndarray,
                       face_instance: np.ndarray,
                       threshold: float = PROMPT_PIXEL_THRESHOLD) -> str:
    """Holistic prompt plus the furniture filling more than `threshold` of
    the view's pixels (strictly more; the room frame itself is not listed).
    Most prominent first."""
    fractions = instance_pixel_fractions(face_id_image, face_instance)
    labels = manifest.labels_by_id()
    visible = [
        (frac, labels[i])
        for i, frac in fractions.items()
        if i != manifest.room.instance_id and i in labels and frac > threshold
    ]
    if not visible:
        return manifest.prompt
    visible.sort(key=lambda pair: (-pair[0], pair[1]))
    return f"{manifest.prompt} with {join_labels([label for _, label in visible])}"


def room_frame_prompt(manifest: SceneManifest) -> str:
    return f"{manifest.prompt}, without furniture"


def direction_label(camera: Camera, center) -> str:
    """Viewpoint direction bin relative to the instance (front = +x)."""
    offset = np.asarray(camera.position, dtype=np.float64) - np.asarray(center)
    horizontal = np.hypot(offset[0], offset[1])
    elevation = np.degrees(np.arctan2(offset[2], horizontal))
    if elevation > 60.0:
        return "top-down"
    azimuth = abs(np.degrees(np.arctan2(offset[1], offset[0])))
    if azimuth < 22.5:
        return "front"
    if azimuth < 67.5:
        return "front side"
    if azimuth < 112.5:
        return "side"
    return "rear"


def furniture_prompt(manifest: SceneManifest, label: str, camera: Camera, center) -> str:
    return f"A {manifest.style} {label}, {direction_label(camera, center)} view"
