"""Stage-2 repaint tests: mask combining, painted-region preservation,
occlusion completion, and scene-level union."""

import numpy as np
import pytest

from texsync import ConfigError, TextureMap
from texsync.denoise import IdentityCodec, TargetDenoiser, ViewGraph
from texsync.raster import DEPTH_TOLERANCE_FRACTION, build_atlas_table
from texsync.repaint import (
    ALTERNATE,
    EARLY,
    LATTER,
    MIDDLE,
    PhasePlan,
    RepaintContext,
    RepaintJob,
    instance_order,
    mask_combine,
    merge_into_scene,
    repaint_instance,
    repaint_scene,
)
from texsync.sampler import FUSED, PLAIN, MergePolicy, ViewSet, multiview_sample
from texsync.schedule import NoiseSchedule

from oracles import visible_texels
from scenes import box, ring_cameras, smooth_texture


def streams_for(n, seed=42):
    root = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in root.spawn(n)]


@pytest.fixture(scope="module")
def cube_setup():
    cube = box((0, 0, 0), (1, 1, 1), instance=0)
    cams = []
    for k, elev in zip(range(9), [0, 30] * 5):
        az = 360.0 * k / 9
        dist = 0.95 * np.sqrt(3)
        offset = np.array(
            [
                dist * np.cos(np.radians(az)) * np.cos(np.radians(elev)),
                dist * np.sin(np.radians(az)) * np.cos(np.radians(elev)),
                dist * np.sin(np.radians(elev)),
            ]
        )
        from texsync.geometry import Camera

        cams.append(
            Camera(position=offset, look_at=(0, 0, 0), up=(0, 0, 1),
                   fov_degrees=60, width=64, height=64)
        )
    views = ViewSet(cams, ViewGraph.complete(9))
    sched = NoiseSchedule()
    atlas = build_atlas_table(cube, (64, 64))
    return cube, views, sched, atlas


class TestPhasePlan:
    def test_boundaries_and_exhaustiveness(self):
        sched = NoiseSchedule()
        plan = PhasePlan.from_schedule(sched)
        counts = {EARLY: 0, MIDDLE: 0, ALTERNATE: 0, LATTER: 0}
        for t, phase in zip(sched.timesteps, plan.phases):
            counts[phase] += 1
            if t >= 800:
                assert phase == EARLY
            elif t >= 500:
                assert phase == MIDDLE
            elif t >= 300:
                assert phase == ALTERNATE
            else:
                assert phase == LATTER
        assert sum(counts.values()) == sched.inference_steps
        assert counts == {EARLY: 11, MIDDLE: 15, ALTERNATE: 10, LATTER: 14}

    def test_as_stage_plan_mapping(self):
        plan = PhasePlan((EARLY, MIDDLE, ALTERNATE, LATTER))
        assert plan.as_stage_plan().modes == (PLAIN, FUSED, ALTERNATE, PLAIN)

    def test_conditioning_only_early_and_middle(self):
        plan = PhasePlan((EARLY, MIDDLE, ALTERNATE, LATTER))
        assert [plan.conditioned(i) for i in range(4)] == [True, True, False, False]


class TestMaskCombine:
    def test_full_mask_returns_noised_painted_exactly(self):
        sched = NoiseSchedule()
        rng = np.random.default_rng(0)
        painted = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        unpainted = rng.normal(size=(8, 8, 3)).astype(np.float32)
        noise = rng.normal(size=(8, 8, 3)).astype(np.float32)
        t = 500
        out = mask_combine(unpainted, painted, t, noise, np.ones((8, 8)), sched)
        ab = sched.alpha_bar(t - 1)
        expected = np.float32(np.sqrt(ab)) * painted + np.float32(np.sqrt(1 - ab)) * noise
        assert np.allclose(out, expected, atol=1e-6)

    def test_zero_mask_identity_bit_exact(self):
        sched = NoiseSchedule()
        rng = np.random.default_rng(1)
        painted = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        unpainted = rng.normal(size=(8, 8, 3)).astype(np.float32)
        noise = rng.normal(size=(8, 8, 3)).astype(np.float32)
        out = mask_combine(unpainted, painted, 500, noise, np.zeros((8, 8)), sched)
        assert np.array_equal(out, unpainted)

    def test_half_split_per_pixel_recomposition(self):
        sched = NoiseSchedule()
        rng = np.random.default_rng(2)
        painted = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
        unpainted = rng.normal(size=(8, 8, 3)).astype(np.float32)
        noise = rng.normal(size=(8, 8, 3)).astype(np.float32)
        mask = np.zeros((8, 8), np.float32)
        mask[:, :4] = 1.0
        t = 500
        out = mask_combine(unpainted, painted, t, noise, mask, sched, t_prev=480)
        ab = sched.alpha_bar(480)
        noised = np.float32(np.sqrt(ab)) * painted + np.float32(np.sqrt(1 - ab)) * noise
        # per-pixel oracle
        for i in range(8):
            for j in range(8):
                expected = noised[i, j] if j < 4 else unpainted[i, j]
                assert np.allclose(out[i, j], expected, atol=1e-6)

    def test_strict_source_noise_level(self):
        sched = NoiseSchedule()
        painted = np.full((4, 4, 3), 0.5, np.float32)
        noise = np.zeros((4, 4, 3), np.float32)
        t = 500
        loose = mask_combine(np.zeros_like(painted), painted, t, noise, np.ones((4, 4)), sched)
        strict = mask_combine(
            np.zeros_like(painted), painted, t, noise, np.ones((4, 4)), sched,
            noise_level_at_t=True,
        )
        assert np.allclose(loose, np.sqrt(sched.alpha_bar(499)) * 0.5, atol=1e-6)
        assert np.allclose(strict, np.sqrt(sched.alpha_bar(500)) * 0.5, atol=1e-6)

    def test_full_chain_all_early_recovers_painted_exactly(self):
        """With mask combining at every step, the final latent equals the
        painted latent because the destination level reaches 0."""
        cube = box((0, 0, 0), (1, 1, 1), instance=0)
        cams = ring_cameras((0, 0, 0), 1.6, count=4, res=32)
        views = ViewSet(cams, ViewGraph.complete(4))
        sched = NoiseSchedule()
        atlas = build_atlas_table(cube, (32, 32))
        gt = TextureMap(
            smooth_texture(32, 32, seed=5), (atlas.face_id >= 0).astype(np.float32)
        )
        context = RepaintContext.build(
            cube, 0, views, gt, codec=IdentityCodec(), schedule=sched,
            merge_policy=MergePolicy(), atlas=atlas,
        )
        context.engine.denoiser = TargetDenoiser(
            sched, dict(enumerate(context.painted_latents))
        )
        plan = PhasePlan((EARLY,) * sched.inference_steps)
        result = repaint_instance(context, sched, plan, streams_for(4, seed=3))
        for v in range(4):
            rms = np.sqrt(np.mean((result.final_latents[v] - context.painted_latents[v]) ** 2))
            assert rms < 1e-4

    def test_t_zero_rejected(self):
        sched = NoiseSchedule()
        z = np.zeros((2, 2, 3), np.float32)
        with pytest.raises(ConfigError):
            mask_combine(z, z, 0, z, np.ones((2, 2)), sched)


class TestRepaintInstance:
    def test_fully_painted_instance_preserved(self, cube_setup):
        cube, views, sched, atlas = cube_setup
        gt = TextureMap(
            smooth_texture(64, 64, seed=6), (atlas.face_id >= 0).astype(np.float32)
        )
        context = RepaintContext.build(
            cube, 0, views, gt, codec=IdentityCodec(), schedule=sched,
            merge_policy=MergePolicy(), atlas=atlas,
        )
        context.engine.denoiser = TargetDenoiser(
            sched, dict(enumerate(context.painted_latents))
        )
        result = repaint_instance(
            context, sched, PhasePlan.from_schedule(sched), streams_for(9, seed=4)
        )
        both = (result.texture.weight > 0) & (gt.weight > 0)
        rms = np.sqrt(np.mean((result.texture.texels[both] - gt.texels[both]) ** 2))
        assert rms < 0.02

    def test_fully_unpainted_bit_identical_to_plain_sampling(self, cube_setup):
        cube, views, sched, atlas = cube_setup
        empty = TextureMap.zeros(64, 64)
        context = RepaintContext.build(
            cube, 0, views, empty, codec=IdentityCodec(), schedule=sched,
            merge_policy=MergePolicy(), atlas=atlas,
        )
        rng = np.random.default_rng(8)
        targets = {
            v: rng.uniform(0, 1, context.engine.latent_shape).astype(np.float32)
            for v in range(9)
        }
        context.engine.denoiser = TargetDenoiser(sched, targets)
        assert all(np.all(m == 0) for m in context.painted_masks)
        phase_plan = PhasePlan.from_schedule(sched)
        repaint_result = repaint_instance(
            context, sched, phase_plan, streams_for(9, seed=5)
        )
        plain_result = multiview_sample(
            cube, views, context.engine.denoiser, IdentityCodec(), sched,
            MergePolicy(), phase_plan.as_stage_plan(), streams_for(9, seed=5),
            (64, 64), engine=context.engine,
        )
        assert np.array_equal(repaint_result.texture.texels, plain_result.texture.texels)
        assert np.array_equal(repaint_result.texture.weight, plain_result.texture.weight)

    def test_half_painted_cube_preserves_and_completes(self, cube_setup):
        cube, views, sched, atlas = cube_setup
        gt = TextureMap(
            smooth_texture(64, 64, seed=7), (atlas.face_id >= 0).astype(np.float32)
        )
        # stage 1 painted only faces 0..5 (half the cube's 12 triangles)
        painted_mask = np.isin(atlas.face_id, np.arange(6)) & (atlas.face_id >= 0)
        stage1 = TextureMap(
            np.where(painted_mask[..., None], gt.texels, 0.0).astype(np.float32),
            np.where(painted_mask, gt.weight, 0.0).astype(np.float32),
        )
        context = RepaintContext.build(
            cube, 0, views, stage1, codec=IdentityCodec(), schedule=sched,
            merge_policy=MergePolicy(), atlas=atlas,
        )
        context.engine.denoiser = TargetDenoiser(
            sched, dict(enumerate(context.painted_latents))
        )
        result = repaint_instance(
            context, sched, PhasePlan.from_schedule(sched), streams_for(9, seed=6)
        )
        covered = result.texture.weight > 0
        painted_and_covered = painted_mask & covered
        rms = np.sqrt(
            np.mean(
                (result.texture.texels[painted_and_covered] - stage1.texels[painted_and_covered]) ** 2
            )
        )
        assert rms < 0.02
        # full coverage of every texel an instance view can actually see
        charted = atlas.face_id >= 0
        rows, cols = np.nonzero(charted)
        tol = DEPTH_TOLERANCE_FRACTION * cube.diagonal()
        oracle_any = np.zeros(len(rows), dtype=bool)
        for cam in views.cameras:
            oracle_any |= visible_texels(
                cube, cam, atlas.world[rows, cols], atlas.face_id[rows, cols], tol
            )
        assert np.all(covered[rows[oracle_any], cols[oracle_any]])

    def test_instance_isolation(self, cube_setup):
        """Repainting one instance never writes another instance's texels."""
        from texsync.geometry import merge_meshes

        cube_a = box((-0.8, 0, 0), (0.8, 0.8, 0.8), instance=0)
        cube_b = box((0.8, 0, 0), (0.8, 0.8, 0.8), instance=1)
        from texsync.geometry import Mesh

        scene = merge_meshes([(cube_a, 0), (cube_b, 1)])
        # remap each instance's uv into its own half of the atlas
        uv = scene.uv.copy()
        uv[:12] = uv[:12] * [0.45, 1.0]
        uv[12:] = uv[12:] * [0.45, 1.0] + [0.55, 0.0]
        scene = Mesh(scene.vertices, scene.faces, uv, scene.face_instance)
        cams = ring_cameras((0, 0, 0), 3.2, count=6, res=48)
        views = ViewSet(cams, ViewGraph.complete(6))
        sched = NoiseSchedule()
        atlas = build_atlas_table(scene, (64, 64))
        stage1 = TextureMap(
            smooth_texture(64, 64, seed=9), (atlas.face_id >= 0).astype(np.float32)
        )
        context = RepaintContext.build(
            scene, 0, views, stage1, codec=IdentityCodec(), schedule=sched,
            merge_policy=MergePolicy(), atlas=atlas,
        )
        context.engine.denoiser = TargetDenoiser(
            sched, dict(enumerate(context.painted_latents))
        )
        result = repaint_instance(
            context, sched, PhasePlan.from_schedule(sched), streams_for(6, seed=7)
        )
        other = atlas.instance == 1
        assert np.all(result.texture.weight[other] == 0)
        assert np.all(result.texture.texels[other] == 0)


class TestRepaintScene:
    def test_zero_weight_set_never_grows_and_union_preserves(self, cube_setup):
        cube, views, sched, atlas = cube_setup
        gt = TextureMap(
            smooth_texture(64, 64, seed=10), (atlas.face_id >= 0).astype(np.float32)
        )
        painted_mask = np.isin(atlas.face_id, np.arange(6)) & (atlas.face_id >= 0)
        stage1 = TextureMap(
            np.where(painted_mask[..., None], gt.texels, 0.0).astype(np.float32),
            np.where(painted_mask, gt.weight, 0.0).astype(np.float32),
        )

        def make_denoiser(job, context):
            return TargetDenoiser(sched, dict(enumerate(context.painted_latents)))

        final, runs = repaint_scene(
            cube, stage1, [RepaintJob(0, views, [""] * 9)], make_denoiser,
            IdentityCodec(), sched, MergePolicy(), PhasePlan.from_schedule(sched),
            lambda inst, n: streams_for(n, seed=100 + inst), atlas=atlas,
        )
        assert len(runs) == 1
        stage1_zero = stage1.weight == 0
        final_zero = final.weight == 0
        assert np.all(~final_zero | stage1_zero)  # zero set shrank or stayed
        kept = stage1.weight > 0
        grew = kept & (final.weight > 0)
        assert grew.sum() == kept.sum()

    def test_single_instance_scene_equals_direct_repaint(self, cube_setup):
        cube, views, sched, atlas = cube_setup
        stage1 = TextureMap.zeros(64, 64)
        rng = np.random.default_rng(12)
        targets = None

        def make_denoiser(job, context):
            nonlocal targets
            if targets is None:
                targets = {
                    v: rng.uniform(0, 1, context.engine.latent_shape).astype(np.float32)
                    for v in range(9)
                }
            return TargetDenoiser(sched, targets)

        final, runs = repaint_scene(
            cube, stage1, [RepaintJob(0, views, [""] * 9)], make_denoiser,
            IdentityCodec(), sched, MergePolicy(), PhasePlan.from_schedule(sched),
            lambda inst, n: streams_for(n, seed=31), atlas=atlas,
        )
        context = RepaintContext.build(
            cube, 0, views, stage1, codec=IdentityCodec(), schedule=sched,
            merge_policy=MergePolicy(), atlas=atlas,
        )
        context.engine.denoiser = TargetDenoiser(sched, targets)
        direct = repaint_instance(
            context, sched, PhasePlan.from_schedule(sched), streams_for(9, seed=31)
        )
        inst_mask = atlas.instance == 0
        assert np.array_equal(
            final.texels[inst_mask], direct.texture.texels[inst_mask]
        )

    def test_empty_instance_skipped_with_warning(self, cube_setup, caplog):
        cube, views, sched, atlas = cube_setup
        stage1 = TextureMap.zeros(64, 64)
        with caplog.at_level("WARNING"):
            final, runs = repaint_scene(
                cube, stage1, [RepaintJob(99, views, [""] * 9)],
                lambda job, ctx: None, IdentityCodec(), sched, MergePolicy(),
                PhasePlan.from_schedule(sched), lambda i, n: streams_for(n),
                atlas=atlas,
            )
        assert runs == []
        assert any("no atlas texels" in r.message for r in caplog.records)

    def test_instance_order(self):
        volumes = {0: 30.0, 1: 0.5, 2: 2.0, 3: 2.0}
        assert instance_order(volumes, room_id=0) == [0, 2, 3, 1]

    def test_merge_into_scene_disjoint_union(self):
        scene = TextureMap.zeros(8, 8)
        scene.texels[:, :4] = 0.3
        scene.weight[:, :4] = 1.0
        inst = TextureMap.zeros(8, 8)
        inst.texels[:, 4:] = 0.9
        inst.weight[:, 4:] = 0.7
        mask = np.zeros((8, 8), bool)
        mask[:, 4:] = True
        out = merge_into_scene(scene, inst, mask)
        assert np.all(out.texels[:, :4] == 0.3)
        assert np.all(out.texels[:, 4:] == np.float32(0.9))
        assert np.all(out.weight[:, 4:] == np.float32(0.7))
