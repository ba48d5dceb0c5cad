"""Manifest loading, camera policies, and prompt construction."""

import numpy as np
import pytest

from texsync import Camera, ConfigError
from texsync.demo import write_demo_scene
from texsync.scene import (
    CameraPolicy,
    SceneManifest,
    direction_label,
    furniture_prompt,
    instance_pixel_fractions,
    place_cameras,
    room_frame_prompt,
    stage1_view_prompt,
)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    directory = tmp_path_factory.mktemp("scene")
    write_demo_scene(str(directory))
    return SceneManifest.load(directory / "scene.yaml")


class TestManifest:
    def test_loads_demo_scene(self, manifest):
        assert manifest.prompt == "A cozy demo bedroom"
        assert manifest.style == "cozy"
        assert manifest.room.label == "room frame"
        assert [r.label for r in manifest.instances] == ["single bed", "chair"]

    def test_scene_mesh_has_disjoint_instance_charts(self, manifest):
        from texsync.raster import build_atlas_table

        mesh = manifest.build_scene_mesh()
        manifest.validate_mesh_ids(mesh)
        atlas = build_atlas_table(mesh, (128, 128))
        assert atlas.overlap_count == 0
        present = set(np.unique(atlas.instance)) - {-1}
        assert present == {0, 1, 2}

    def test_orphan_instance_ids_rejected(self, manifest):
        from texsync.primitives import box

        stray = box((0, 0, 0), (1, 1, 1), instance=77)
        with pytest.raises(ConfigError, match="77"):
            manifest.validate_mesh_ids(stray)

    def test_missing_mesh_file_rejected(self, tmp_path):
        (tmp_path / "scene.yaml").write_text(
            'prompt: "p"\nstyle: "s"\nroom: {id: 0, label: "room", mesh: "absent.obj"}\n'
        )
        with pytest.raises(ConfigError, match="not found"):
            SceneManifest.load(tmp_path / "scene.yaml")

    def test_duplicate_ids_rejected(self, tmp_path):
        from texsync.geometry import save_obj
        from texsync.primitives import box

        save_obj(tmp_path / "a.obj", box((0, 0, 0), (1, 1, 1)))
        (tmp_path / "scene.yaml").write_text(
            'prompt: "p"\nstyle: "s"\n'
            'room: {id: 0, label: "room", mesh: "a.obj"}\n'
            'instances:\n  - {id: 0, label: "bed", mesh: "a.obj"}\n'
        )
        with pytest.raises(ConfigError, match="duplicate"):
            SceneManifest.load(tmp_path / "scene.yaml")


class TestCameraPolicies:
    def test_global_ring_radius_half_shortest_horizontal_axis(self):
        views = place_cameras(CameraPolicy.global_phase(), (-2, -1.5, 0), (2, 1.5, 2.5))
        assert len(views.cameras) == 6
        center = np.array([0, 0, 1.25])
        for cam in views.cameras:
            assert np.linalg.norm(cam.position - center) == pytest.approx(1.5)
            assert cam.position[2] == pytest.approx(1.25)  # elevation 0
        # azimuth spacing 60 degrees exactly
        az = [np.degrees(np.arctan2(*(c.position - center)[1::-1])) % 360 for c in views.cameras]
        assert np.allclose(sorted(az), [0, 60, 120, 180, 240, 300], atol=1e-9)
        # ring adjacency with self
        assert views.graph.related[0] == (5, 0, 1)

    def test_room_frame_policy_twelve_views_fov80(self):
        policy = CameraPolicy.room_frame_phase()
        views = place_cameras(policy, (-2, -1.5, 0), (2, 1.5, 2.5))
        assert len(views.cameras) == 12
        assert all(c.fov_degrees == 80.0 for c in views.cameras)
        assert views.graph.related[0] == tuple(range(12))

    def test_furniture_distance_095_diagonal(self):
        views = place_cameras(
            CameraPolicy.furniture_phase(), (-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)
        )
        assert len(views.cameras) == 9
        expected = 0.95 * np.sqrt(3.0)
        for cam in views.cameras:
            assert np.linalg.norm(cam.position) == pytest.approx(expected, rel=1e-9)
        elevations = [
            np.degrees(np.arcsin(cam.position[2] / np.linalg.norm(cam.position)))
            for cam in views.cameras
        ]
        assert np.allclose(elevations[0::2], 0.0, atol=1e-9)
        assert np.allclose(elevations[1::2], 30.0, atol=1e-9)

    def test_look_at_center_within_tolerance(self):
        views = place_cameras(CameraPolicy.furniture_phase(), (0, 0, 0), (2, 1, 1))
        center = np.array([1.0, 0.5, 0.5])
        for cam in views.cameras:
            to_center = center - cam.position
            to_center /= np.linalg.norm(to_center)
            assert np.allclose(cam.forward, to_center, atol=1e-6)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ConfigError):
            place_cameras(CameraPolicy.global_phase(), (0, 0, 0), (0, 1, 1))


class TestPrompts:
    def test_threshold_includes_prominent_excludes_tiny(self, manifest):
        face_id = np.full((100, 100), -1, np.int32)
        face_id[:, :] = 0  # room everywhere
        face_id[:30, :100] = 1  # bed: 30%
        face_id[:5, :10] = 2  # chair: 0.5%
        face_instance = np.array([0, 1, 2], np.int32)
        prompt = stage1_view_prompt(manifest, face_instance[face_id], np.arange(3, dtype=np.int32))
        assert prompt == "A cozy demo bedroom with single bed"

    def test_exactly_at_threshold_excluded(self, manifest):
        face_id = np.zeros((100, 100), np.int32)
        face_id[0, :100] = 1  # exactly 1.0% of pixels
        prompt = stage1_view_prompt(manifest, face_id, np.array([0, 1], np.int32))
        assert prompt == "A cozy demo bedroom"

    def test_three_visible_instances_joined_with_and(self, manifest):
        manifest_labels = {1: "single bed", 2: "chair"}
        del manifest_labels
        face_id = np.zeros((10, 10), np.int32)
        face_id[0:4] = 1  # 40% bed
        face_id[4:6] = 2  # 20% chair
        prompt = stage1_view_prompt(manifest, face_id, np.array([0, 1, 2], np.int32))
        assert prompt == "A cozy demo bedroom with single bed and chair"

    def test_empty_view_keeps_holistic_prompt(self, manifest):
        face_id = np.full((10, 10), -1, np.int32)
        assert stage1_view_prompt(manifest, face_id, np.zeros(1, np.int32)) == manifest.prompt

    def test_room_frame_prompt(self, manifest):
        assert room_frame_prompt(manifest) == "A cozy demo bedroom, without furniture"

    def test_furniture_prompt_front_view(self, manifest):
        cam = Camera(position=(2, 0, 0), look_at=(0, 0, 0), up=(0, 0, 1),
                     fov_degrees=60, width=8, height=8)
        text = furniture_prompt(manifest, "single bed", cam, (0, 0, 0))
        assert text == "A cozy single bed, front view"

    @pytest.mark.parametrize(
        "position,expected",
        [
            ((2, 0, 0), "front"),
            ((2, 0.5, 0), "front"),  # ~14 degrees
            ((1, 1, 0), "front side"),  # 45 degrees
            ((0, 2, 0), "side"),  # 90 degrees
            ((-2, 0.4, 0), "rear"),
            ((0.3, 0, 2), "top-down"),  # elevation > 60
        ],
    )
    def test_direction_bins(self, position, expected):
        up = (1, 0, 0) if abs(position[2]) > abs(position[0]) else (0, 0, 1)
        cam = Camera(position=position, look_at=(0, 0, 0), up=up,
                     fov_degrees=60, width=8, height=8)
        assert direction_label(cam, (0, 0, 0)) == expected

    def test_pixel_fractions(self):
        face_id = np.zeros((10, 10), np.int32)
        face_id[5:] = 1
        face_id[0, 0] = -1
        fractions = instance_pixel_fractions(face_id, np.array([3, 7], np.int32))
        assert fractions == {3: 0.49, 7: 0.5}
