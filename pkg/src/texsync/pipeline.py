"""End-to-end two-stage pipeline orchestration.

Stage 1 textures the whole room from a ring of global cameras; stage 2
repaints each instance (room frame first, then furniture by descending
volume) to fill occlusions while holding stage-1 content. Artifacts land in
the config's output directory:

    texture_stage1.png / texture_stage2.png   fused textures (8-bit)
    texture_stage1_coverage.png / ..2..       per-texel coverage weights
    render_view_NN.png                        final texture from each global camera
    report.json                               timings and coverage statistics
    intermediates/                            optional per-step dumps
"""

from __future__ import annotations

import json
import logging
import os
import time

import numpy as np

from .config import PipelineConfig
from .denoise import ConsensusToyDenoiser, TargetDenoiser, guidance_schedule, make_codec
from .errors import ConfigError
from .geometry import TextureMap, load_png, save_float_image, save_png
from .raster import build_atlas_table
from .repaint import PhasePlan, RepaintJob, instance_order, repaint_scene
from .sampler import MergePolicy, MultiviewEngine, StagePlan, multiview_sample
from .scene import (
    CameraPolicy,
    SceneManifest,
    furniture_prompt,
    place_cameras,
    room_frame_prompt,
    stage1_view_prompt,
)
from .seeds import STAGE_GLOBAL, STAGE_REPAINT, view_streams

logger = logging.getLogger(__name__)


def _camera_policy(config: PipelineConfig, phase: str) -> CameraPolicy:
    overrides = config.cameras.get(phase, {}) if config.cameras else {}
    resolution = tuple(int(v) for v in overrides.get("resolution", config.image_size))
    if phase == "global":
        policy = CameraPolicy.global_phase(
            resolution=resolution,
            fov=float(overrides.get("fov", 60.0)),
            count=int(overrides.get("count", 6)),
        )
        if not config.ring_include_self:
            policy = CameraPolicy(
                policy.phase, policy.count, policy.fov_degrees, policy.width,
                policy.height, policy.elevations, policy.distance_scale,
                include_self_in_ring=False,
            )
        return policy
    if phase == "room_frame":
        return CameraPolicy.room_frame_phase(
            resolution=resolution,
            fov=float(overrides.get("fov", 80.0)),
            count=int(overrides.get("count", 12)),
        )
    return CameraPolicy.furniture_phase(
        resolution=resolution,
        fov=float(overrides.get("fov", 60.0)),
        count=int(overrides.get("count", 9)),
        elevations=tuple(overrides.get("elevations", (0.0, 30.0))),
    )


def _load_ground_truth(config: PipelineConfig, atlas) -> TextureMap:
    values = load_png(config.target_texture)
    shape = (config.texture_resolution, config.texture_resolution)
    if values.shape[:2] != shape:
        raise ConfigError(
            f"target_texture resolution {values.shape[:2]} != texture_resolution "
            f"{shape}"
        )
    return TextureMap(values, (atlas.face_id >= 0).astype(np.float32))


def build_view_plan(config: PipelineConfig, manifest: SceneManifest):
    """The pipeline's camera layout with its global view-id assignment:
    returns (global ViewSet, ordered stage-2 RepaintJob list). Remote
    denoiser backends key on these ids, so the allocation is part of the
    external contract: stage-1 views first, then each repaint job's views in
    repaint order."""
    next_view_id = 0

    def allocate(count):
        nonlocal next_view_id
        ids = list(range(next_view_id, next_view_id + count))
        next_view_id += count
        return ids

    room_lo, room_hi = manifest.room.mesh.bounding_box()
    global_policy = _camera_policy(config, "global")
    global_views = place_cameras(
        global_policy, room_lo, room_hi, view_ids=allocate(global_policy.count)
    )
    volumes = {r.instance_id: r.volume() for r in manifest.records()}
    order = instance_order(volumes, manifest.room.instance_id)
    records = {r.instance_id: r for r in manifest.records()}
    jobs = []
    for instance_id in order:
        record = records[instance_id]
        lo, hi = record.bounding_box()
        if instance_id == manifest.room.instance_id:
            cam_policy = _camera_policy(config, "room_frame")
            views = place_cameras(cam_policy, lo, hi, view_ids=allocate(cam_policy.count))
            prompts = [room_frame_prompt(manifest)] * cam_policy.count
        else:
            cam_policy = _camera_policy(config, "furniture")
            views = place_cameras(cam_policy, lo, hi, view_ids=allocate(cam_policy.count))
            center = (np.asarray(lo) + np.asarray(hi)) / 2.0
            prompts = [
                furniture_prompt(manifest, record.label, cam, center)
                for cam in views.cameras
            ]
        jobs.append(RepaintJob(instance_id, views, prompts))
    return global_views, jobs


def export_view_targets(config: PipelineConfig, directory) -> int:
    """Render the configured ground-truth texture from every view the
    pipeline will use and write one `view_<id>.npy` per view; a wire-protocol
    server can then reproduce the in-process target backend exactly."""
    config.validate()
    if not config.target_texture:
        raise ConfigError("export_view_targets requires target_texture")
    manifest = SceneManifest.load(config.scene)
    mesh = manifest.build_scene_mesh()
    tex_shape = (config.texture_resolution, config.texture_resolution)
    atlas = build_atlas_table(mesh, tex_shape)
    ground_truth = _load_ground_truth(config, atlas)
    global_views, jobs = build_view_plan(config, manifest)
    os.makedirs(directory, exist_ok=True)
    from .raster import Projector

    count = 0
    for views in [global_views] + [job.views for job in jobs]:
        for vid, camera in zip(views.view_ids, views.cameras):
            bundle = Projector(mesh, camera, tex_shape, atlas=atlas).render(ground_truth)
            np.save(os.path.join(directory, f"view_{vid}.npy"), bundle.color)
            count += 1
    return count


class _IntermediateDumper:
    def __init__(self, directory, tag):
        self.directory = directory
        self.tag = tag
        os.makedirs(directory, exist_ok=True)

    def __call__(self, step_index, timestep, merged, x0s):
        if merged is not None:
            save_png(
                os.path.join(self.directory, f"{self.tag}_step{step_index:03d}_texture.png"),
                merged.texels,
            )
        grid = np.concatenate([np.clip(x, 0, 1) for x in x0s], axis=1)
        save_png(
            os.path.join(self.directory, f"{self.tag}_step{step_index:03d}_views.png"),
            grid,
        )


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute both stages and write all artifacts; returns the run report."""
    config.validate()
    started = time.perf_counter()
    os.makedirs(config.output_dir, exist_ok=True)

    manifest = SceneManifest.load(config.scene)
    mesh = manifest.build_scene_mesh()
    manifest.validate_mesh_ids(mesh)
    tex_shape = (config.texture_resolution, config.texture_resolution)
    atlas = build_atlas_table(mesh, tex_shape)

    schedule_kwargs = dict(
        train_steps=config.train_steps,
        beta_start=config.beta_start,
        beta_end=config.beta_end,
        inference_steps=config.inference_steps,
    )
    from .schedule import NoiseSchedule

    schedule = NoiseSchedule(**schedule_kwargs)
    codec = make_codec(config.codec, config.codec_scale)
    policy = MergePolicy(
        gamma=config.gamma,
        exp_start=config.exp_start,
        exp_end=config.exp_end,
        renormalized=config.renormalized_merge,
    )
    stage_plan = StagePlan.from_schedule(
        schedule, fractions=config.stage_fractions, fused_parity=config.fused_parity
    )
    phase_plan = PhasePlan.from_schedule(
        schedule, fractions=config.phase_fractions, fused_parity=config.fused_parity
    )
    guidance = guidance_schedule(
        schedule.inference_steps, config.guidance_start, config.guidance_end
    )

    ground_truth = None
    if config.backend in ("target", "consensus_toy"):
        ground_truth = _load_ground_truth(config, atlas)

    remote = None
    if config.backend == "remote":
        from .remote import RemoteDenoiser

        remote = RemoteDenoiser(
            config.remote_endpoint, schedule, timeout=config.remote_timeout
        )
        logger.info("remote denoiser connected: %s", remote.backend_name)
    try:
        return _run_stages(
            config, manifest, mesh, atlas, schedule, codec, policy, stage_plan,
            phase_plan, guidance, ground_truth, remote, started,
        )
    finally:
        if remote is not None:
            remote.close()


def _run_stages(config, manifest, mesh, atlas, schedule, codec, policy, stage_plan,
                phase_plan, guidance, ground_truth, remote, started):
    tex_shape = (config.texture_resolution, config.texture_resolution)
    global_views, jobs = build_view_plan(config, manifest)

    def make_denoiser(projectors, view_ids):
        if config.backend == "remote":
            return remote
        targets = {
            vid: proj.render(ground_truth).color
            for vid, proj in zip(view_ids, projectors)
        }
        if config.backend == "target":
            return TargetDenoiser(schedule, targets)
        return ConsensusToyDenoiser(schedule, targets)

    report = {
        "backend": config.backend,
        "seed": config.seed,
        "texture_resolution": config.texture_resolution,
        "atlas_overlap_texels": atlas.overlap_count,
        "stages": {},
    }

    # -- stage 1: global texturing -------------------------------------------
    t_stage1 = time.perf_counter()
    engine = MultiviewEngine(
        mesh, global_views, None, codec, schedule, policy, tex_shape,
        guidance=guidance, atlas=atlas, workers=config.workers,
        stage_name="stage1",
    )
    engine.prompts = [
        stage1_view_prompt(manifest, proj.frame.face_id, mesh.face_instance)
        for proj in engine.projectors
    ]
    engine.denoiser = make_denoiser(engine.projectors, global_views.view_ids)
    dumper = None
    if config.dump_intermediates:
        dumper = _IntermediateDumper(
            os.path.join(config.output_dir, "intermediates"), "stage1"
        )
    t_loop = time.perf_counter()
    stage1 = multiview_sample(
        mesh, global_views, engine.denoiser, codec, schedule, policy, stage_plan,
        view_streams(config.seed, STAGE_GLOBAL, -1, len(global_views.cameras)),
        tex_shape, engine=engine, on_step=dumper, workers=config.workers,
    )
    now = time.perf_counter()
    charted = atlas.face_id >= 0
    report["stages"]["stage1"] = {
        "seconds": now - t_stage1,
        "setup_seconds": t_loop - t_stage1,
        "sampling_seconds": now - t_loop,
        "step_seconds": stage1.step_seconds,
        "barrier_seconds": stage1.barrier_seconds,
        "views": len(global_views.cameras),
        "prompts": engine.prompts,
        "coverage_fraction": float((stage1.texture.weight > 0)[charted].mean()),
    }
    save_png(os.path.join(config.output_dir, "texture_stage1.png"), stage1.texture.texels)
    save_png(
        os.path.join(config.output_dir, "texture_stage1_coverage.png"),
        stage1.texture.weight,
    )
    if config.dump_intermediates:
        save_float_image(
            os.path.join(config.output_dir, "texture_stage1.npy"), stage1.texture.texels
        )

    # -- stage 2: per-instance repaint ----------------------------------------
    t_stage2 = time.perf_counter()
    order = [job.instance_id for job in jobs]

    def job_denoiser(job, context):
        return make_denoiser(context.engine.projectors, job.views.view_ids)

    def on_instance(instance_id, result):
        if config.dump_intermediates:
            save_png(
                os.path.join(
                    config.output_dir, "intermediates", f"instance_{instance_id:02d}.png"
                ),
                result.texture.texels,
            )

    if config.dump_intermediates:
        os.makedirs(os.path.join(config.output_dir, "intermediates"), exist_ok=True)
    final_texture, runs = repaint_scene(
        mesh, stage1.texture, jobs, job_denoiser, codec, schedule, policy, phase_plan,
        lambda instance_id, n: view_streams(config.seed, STAGE_REPAINT, instance_id, n),
        guidance=guidance, atlas=atlas, workers=config.workers,
        noise_level_at_t=config.strict_painted_noise_level,
        on_instance=on_instance,
    )
    stage2_seconds = time.perf_counter() - t_stage2
    report["stages"]["stage2"] = {
        "seconds": stage2_seconds,
        "instances": [
            {
                "instance": run.instance_id,
                "seconds": run.seconds,
                "step_seconds": run.step_seconds,
                "barrier_seconds": run.barrier_seconds,
                "covered_texels": int((run.texture.weight > 0).sum()),
            }
            for run in runs
        ],
        "order": order,
        "coverage_fraction": float((final_texture.weight > 0)[charted].mean()),
    }

    save_png(os.path.join(config.output_dir, "texture_stage2.png"), final_texture.texels)
    save_png(
        os.path.join(config.output_dir, "texture_stage2_coverage.png"),
        final_texture.weight,
    )
    if config.dump_intermediates:
        save_float_image(
            os.path.join(config.output_dir, "texture_stage2.npy"), final_texture.texels
        )
    for v, proj in enumerate(engine.projectors):
        bundle = proj.render(final_texture)
        save_png(
            os.path.join(config.output_dir, f"render_view_{v:02d}.png"), bundle.color
        )

    report["total_seconds"] = time.perf_counter() - started
    with open(os.path.join(config.output_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return report
