"""Stage-2 per-instance repaint: inpaints occluded regions while holding the
regions already textured in stage 1.

The painted content enters the chain through mask combining: after each
early/middle step, pixels that already carry stage-1 texture are replaced by
the painted latents re-noised to the step's destination level, reusing the
step's own noise draw. The latter part of the run continues as plain
multi-view sampling so the whole instance converges jointly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import Mesh, TextureMap
from .sampler import (
    ALTERNATE,
    FUSED,
    PLAIN,
    MergePolicy,
    MultiviewEngine,
    SampleResult,
    StagePlan,
    ViewSet,
)
from .schedule import NoiseSchedule

EARLY, MIDDLE, LATTER = "early", "middle", "latter"
PHASE_FRACTIONS = (0.8, 0.5, 0.3)  # early above, middle, alternate, latter


@dataclass(frozen=True)
class PhasePlan:
    """Repaint phase per inference step.

    early: plain steps conditioned on painted regions (mask combine).
    middle: fused steps conditioned on painted regions.
    alternate / latter: unconditioned finish; alternate steps interleave
    fused and plain like the stage-1 plan, latter steps are plain.
    """

    phases: tuple
    fused_parity: int = 0

    def __post_init__(self):
        for p in self.phases:
            if p not in (EARLY, MIDDLE, ALTERNATE, LATTER):
                raise ConfigError(f"unknown phase {p!r}")

    @classmethod
    def from_schedule(cls, schedule: NoiseSchedule, fractions=PHASE_FRACTIONS,
                      fused_parity: int = 0) -> "PhasePlan":
        hi, mid, lo = (f * schedule.train_steps for f in fractions)
        phases = []
        for t in schedule.timesteps:
            if t >= hi:
                phases.append(EARLY)
            elif t >= mid:
                phases.append(MIDDLE)
            elif t >= lo:
                phases.append(ALTERNATE)
            else:
                phases.append(LATTER)
        return cls(tuple(phases), fused_parity)

    def as_stage_plan(self) -> StagePlan:
        """The stage-1 plan this run follows once masking is disabled
        (early -> plain, middle -> fused); used for equivalence checks."""
        mapping = {EARLY: PLAIN, MIDDLE: FUSED, ALTERNATE: ALTERNATE, LATTER: PLAIN}
        return StagePlan(tuple(mapping[p] for p in self.phases), self.fused_parity)

    def conditioned(self, step_index: int) -> bool:
        return self.phases[step_index] in (EARLY, MIDDLE)

    def resolved_mode(self, step_index: int) -> str:
        phase = self.phases[step_index]
        if phase in (EARLY, LATTER):
            return PLAIN
        if phase == MIDDLE:
            return FUSED
        return FUSED if step_index % 2 == self.fused_parity else PLAIN


def mask_combine(
    unpainted_next: np.ndarray,
    painted_latent: np.ndarray,
    t: int,
    noise: np.ndarray,
    mask: np.ndarray,
    schedule: NoiseSchedule,
    t_prev: int | None = None,
    noise_level_at_t: bool = False,
) -> np.ndarray:
    """Blend the freshly sampled latent with the re-noised painted latent.

    The painted latent is noised to the destination level t_prev (the level
    the sampler just stepped to); noise_level_at_t=True noises at the step's
    own level t instead. mask is 1 where stage-1 texture exists.
    """
    if t <= 0:
        raise ConfigError("mask_combine requires t > 0")
    if t_prev is None:
        t_prev = t - 1
    level = t if noise_level_at_t else t_prev
    ab = schedule.alpha_bar(level)
    painted_noised = (
        np.float32(np.sqrt(ab)) * painted_latent
        + np.float32(np.sqrt(1.0 - ab)) * noise
    )
    m = mask.astype(np.float32)
    if m.ndim == unpainted_next.ndim - 1:
        m = m[..., None]
    return painted_noised * m + unpainted_next * (1.0 - m)


def painted_pixel_mask(projector, stage1_texture: TextureMap) -> np.ndarray:
    """P for one view: 1 on foreground pixels whose nearest texel carries
    stage-1 texture (weight > 0)."""
    frame = projector.frame
    ht, wt = stage1_texture.shape
    mask = np.zeros(frame.foreground.shape, dtype=np.float32)
    fg = frame.foreground
    if fg.any():
        uv = frame.uv[fg]
        cols = np.clip(np.round(uv[:, 0] * wt - 0.5).astype(int), 0, wt - 1)
        rows = np.clip(np.round(uv[:, 1] * ht - 0.5).astype(int), 0, ht - 1)
        mask[fg] = (stage1_texture.weight[rows, cols] > 0).astype(np.float32)
    return mask


def latent_mask(mask_image: np.ndarray, codec) -> np.ndarray:
    """Binary painted mask at latent resolution (majority vote per cell)."""
    scale = getattr(codec, "spatial_scale", 1)
    if scale == 1:
        return mask_image
    h, w = mask_image.shape
    pooled = mask_image.reshape(h // scale, scale, w // scale, scale).mean(axis=(1, 3))
    return (pooled > 0.5).astype(np.float32)


@dataclass
class RepaintContext:
    """Everything one instance's repaint needs, derived from stage 1."""

    mesh: Mesh  # full scene mesh (context renders include every instance)
    instance_id: int
    views: ViewSet
    engine: MultiviewEngine
    painted_latents: list  # encoded stage-1 renders per view
    painted_masks: list  # P per view at latent resolution
    stage1_texture: TextureMap

    @classmethod
    def build(cls, mesh, instance_id, views: ViewSet, stage1_texture: TextureMap,
              denoiser=None, codec=None, schedule=None, merge_policy=None, *,
              prompts=None, guidance=None, atlas=None, workers: int = 1) -> "RepaintContext":
        if atlas is None:
            from .raster import build_atlas_table

            atlas = build_atlas_table(mesh, stage1_texture.shape)
        write_mask = atlas.instance == instance_id
        if not write_mask.any():
            raise ConfigError(f"instance {instance_id} owns no atlas texels")
        engine = MultiviewEngine(
            mesh, views, denoiser, codec, schedule, merge_policy,
            stage1_texture.shape, prompts=prompts, guidance=guidance,
            write_mask=write_mask, atlas=atlas, workers=workers,
            stage_name=f"repaint[{instance_id}]",
        )
        painted_latents, painted_masks = [], []
        for proj in engine.projectors:
            render = proj.render(stage1_texture)
            painted_latents.append(codec.encode(render.color))
            painted_masks.append(latent_mask(painted_pixel_mask(proj, stage1_texture), codec))
        return cls(
            mesh=mesh,
            instance_id=instance_id,
            views=views,
            engine=engine,
            painted_latents=painted_latents,
            painted_masks=painted_masks,
            stage1_texture=stage1_texture,
        )


def repaint_instance(
    context: RepaintContext,
    schedule: NoiseSchedule,
    phase_plan: PhasePlan,
    streams,
    *,
    noise_level_at_t: bool = False,
    on_step=None,
) -> SampleResult:
    """Three-phase repaint of one instance; returns its fused texture."""
    if len(phase_plan.phases) != schedule.inference_steps:
        raise ConfigError("phase plan length != inference steps")
    engine = context.engine
    if len(streams) != context.views.graph.num_views:
        raise ConfigError("need one RNG stream per view")
    latents = engine.initial_latents(streams)
    step_seconds = []
    barrier_seconds = []
    for i, t in enumerate(schedule.timesteps):
        started = time.perf_counter()
        t_prev = schedule.prev_timestep(i)
        noise = engine.draw_noise(streams)
        eps = engine.denoise_all(latents, int(t), i)
        x0s = engine.estimates(latents, eps, int(t))
        merged = None
        engine.last_barrier_seconds = 0.0
        if phase_plan.resolved_mode(i) == FUSED:
            x0s, merged = engine.fused_x0(x0s, i)
        latents = engine.posterior_all(latents, x0s, int(t), t_prev, noise)
        if phase_plan.conditioned(i):
            latents = [
                mask_combine(
                    latents[v], context.painted_latents[v], int(t), noise[v],
                    context.painted_masks[v], schedule, t_prev=t_prev,
                    noise_level_at_t=noise_level_at_t,
                ).astype(np.float32)
                for v in engine.view_ids()
            ]
        step_seconds.append(time.perf_counter() - started)
        barrier_seconds.append(engine.last_barrier_seconds)
        if on_step is not None:
            on_step(i, int(t), merged, x0s)
    texture, per_view = engine.final_texture(latents)
    texture.assert_finite()
    return SampleResult(
        texture=texture,
        final_latents=latents,
        per_view_textures=per_view,
        step_seconds=step_seconds,
        barrier_seconds=barrier_seconds,
    )


@dataclass
class InstanceRun:
    instance_id: int
    texture: TextureMap
    step_seconds: list = field(default_factory=list)
    barrier_seconds: list = field(default_factory=list)
    seconds: float = 0.0


def merge_into_scene(scene_texture: TextureMap, instance_texture: TextureMap,
                     instance_mask: np.ndarray) -> TextureMap:
    """Overwrite the instance's atlas region wherever the repaint produced
    coverage; texels the instance views never saw keep their stage-1 values,
    so the uncovered set can only shrink."""
    updated = instance_texture.weight > 0
    write = instance_mask & updated
    out = scene_texture.copy()
    out.texels[write] = instance_texture.texels[write]
    out.weight[write] = np.maximum(
        scene_texture.weight[write], instance_texture.weight[write]
    )
    return out


def instance_order(volumes: dict, room_id: int) -> list:
    """Repaint order: room frame first, then furniture by descending
    bounding-box volume (ties broken by id for determinism)."""
    furniture = sorted(
        (k for k in volumes if k != room_id), key=lambda k: (-volumes[k], k)
    )
    return ([room_id] if room_id in volumes else []) + furniture


@dataclass
class RepaintJob:
    instance_id: int
    views: ViewSet
    prompts: list


def repaint_scene(
    mesh: Mesh,
    stage1_texture: TextureMap,
    jobs,
    make_denoiser,
    codec,
    schedule: NoiseSchedule,
    merge_policy: MergePolicy,
    phase_plan: PhasePlan,
    stream_factory,
    *,
    guidance=None,
    atlas=None,
    workers: int = 1,
    noise_level_at_t: bool = False,
    on_instance=None,
) -> tuple[TextureMap, list]:
    """Repaint every instance in order over the evolving scene texture.

    jobs: ordered RepaintJob list. make_denoiser(job, context) supplies each
    instance's denoiser once its render context exists; stream_factory
    (instance_id, num_views) owns seed derivation. Instances whose atlas
    region is empty are skipped with a warning.
    """
    import logging

    logger = logging.getLogger(__name__)
    if atlas is None:
        from .raster import build_atlas_table

        atlas = build_atlas_table(mesh, stage1_texture.shape)
    scene_texture = stage1_texture.copy()
    runs = []
    for job in jobs:
        if not (atlas.instance == job.instance_id).any():
            logger.warning("instance %d owns no atlas texels; skipped", job.instance_id)
            continue
        started = time.perf_counter()
        context = RepaintContext.build(
            mesh, job.instance_id, job.views, scene_texture,
            codec=codec, schedule=schedule, merge_policy=merge_policy,
            prompts=job.prompts, guidance=guidance, atlas=atlas, workers=workers,
        )
        context.engine.denoiser = make_denoiser(job, context)
        streams = stream_factory(job.instance_id, job.views.graph.num_views)
        result = repaint_instance(
            context, schedule, phase_plan, streams, noise_level_at_t=noise_level_at_t,
        )
        scene_texture = merge_into_scene(
            scene_texture, result.texture, atlas.instance == job.instance_id
        )
        runs.append(
            InstanceRun(
                job.instance_id, result.texture, result.step_seconds,
                result.barrier_seconds, time.perf_counter() - started,
            )
        )
        if on_instance is not None:
            on_instance(job.instance_id, result)
    return scene_texture, runs
