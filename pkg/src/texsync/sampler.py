"""Stage-1 multi-view sampling: per-view denoising, UV back-projection,
dynamic merging, and re-render substitution, staged over the inference run.

Each inference step consumes exactly one noise draw per view from that
view's own RNG stream, regardless of the step's mode, so stage plans can be
swapped without perturbing the random sequence and per-view work can fan out
to any number of workers without changing results.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .denoise import DenoiseRequest, ViewGraph
from .errors import ConfigError, StepError
from .geometry import Camera, Mesh, TextureMap
from .raster import Projector, build_atlas_table
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)

PLAIN, FUSED, ALTERNATE = "plain", "fused", "alternate"
STAGE_FRACTIONS = (0.9, 0.5, 0.3)  # plain above, fused, alternate, plain below


@dataclass(frozen=True)
class MergePolicy:
    """Weighted fusion policy with a step-dependent sharpening exponent.

    renormalized=True divides by the sum of exponentiated weights (a
    partition of unity); False divides by the plain un-exponentiated weight
    sum, which dims the blend as the exponent grows.
    """

    gamma: float = 1e-8
    exp_start: float = 1.0
    exp_end: float = 6.0
    renormalized: bool = True

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.exp_end < self.exp_start:
            raise ConfigError("sharpening exponent must be non-decreasing")

    def exponent_at(self, step_index: int, num_steps: int) -> float:
        if num_steps == 1:
            return self.exp_start
        frac = step_index / (num_steps - 1)
        return self.exp_start + (self.exp_end - self.exp_start) * frac


def merge_textures(textures, weights, exponent: float, policy: MergePolicy) -> TextureMap:
    """Fuse per-view textures with exponent-sharpened weights.

    Renormalized mode divides by the sum of exponentiated weights, so the
    per-view shares form an exact partition of unity on live texels; gamma
    only decides liveness (texels below it stay at value 0, weight 0).
    Literal mode divides by the plain weight sum plus gamma, verbatim. The
    merged weight channel is the per-texel max of the view weights:
    coverage, independent of sharpening.
    """
    if not textures:
        raise ConfigError("nothing to merge")
    shape = textures[0].texels.shape
    for tex, wgt in zip(textures, weights):
        if tex.texels.shape != shape or wgt.shape != shape[:2]:
            raise ConfigError("merge inputs must share resolution")
    num = np.zeros(shape, dtype=np.float64)
    den_exp = np.zeros(shape[:2], dtype=np.float64)
    den_lit = np.zeros(shape[:2], dtype=np.float64)
    coverage = np.zeros(shape[:2], dtype=np.float32)
    for tex, wgt in zip(textures, weights):
        w = np.asarray(wgt, dtype=np.float64)
        we = w**exponent
        num += we[..., None] * tex.texels
        den_exp += we
        den_lit += w
        coverage = np.maximum(coverage, np.asarray(wgt, dtype=np.float32))
    if policy.renormalized:
        live = den_exp >= policy.gamma
        den = np.where(live, den_exp, 1.0)
    else:
        live = den_lit >= policy.gamma
        den = den_lit + policy.gamma
    out = num / den[..., None]
    out[~live] = 0.0
    return TextureMap(out.astype(np.float32), np.where(live, coverage, 0.0))


@dataclass(frozen=True)
class StagePlan:
    """Mode per inference step; `alternate` resolves by step parity."""

    modes: tuple
    fused_parity: int = 0

    def __post_init__(self):
        for m in self.modes:
            if m not in (PLAIN, FUSED, ALTERNATE):
                raise ConfigError(f"unknown stage mode {m!r}")

    @classmethod
    def from_schedule(cls, schedule: NoiseSchedule, fractions=STAGE_FRACTIONS,
                      fused_parity: int = 0) -> "StagePlan":
        hi, mid, lo = (f * schedule.train_steps for f in fractions)
        modes = []
        for t in schedule.timesteps:
            if t >= hi or t < lo:
                modes.append(PLAIN)
            elif t >= mid:
                modes.append(FUSED)
            else:
                modes.append(ALTERNATE)
        return cls(tuple(modes), fused_parity)

    @classmethod
    def constant(cls, schedule: NoiseSchedule, mode: str) -> "StagePlan":
        return cls((mode,) * schedule.inference_steps)

    def resolved_mode(self, step_index: int) -> str:
        mode = self.modes[step_index]
        if mode == ALTERNATE:
            return FUSED if step_index % 2 == self.fused_parity else PLAIN
        return mode


@dataclass
class ViewSet:
    """Cameras plus their adjacency graph; view_ids are the externally
    visible identifiers (globally unique across a pipeline run so remote
    denoisers can key on them), defaulting to local indices."""

    cameras: list
    graph: ViewGraph
    view_ids: list = None

    def __post_init__(self):
        if len(self.cameras) != self.graph.num_views:
            raise ConfigError("camera count != graph views")
        if self.view_ids is None:
            self.view_ids = list(range(len(self.cameras)))
        if len(self.view_ids) != len(self.cameras):
            raise ConfigError("view_ids length != camera count")


@dataclass
class SampleResult:
    texture: TextureMap
    final_latents: list
    per_view_textures: list
    step_seconds: list = field(default_factory=list)
    barrier_seconds: list = field(default_factory=list)  # merge time, 0 on plain steps


def normalized_depth(frame, codec) -> np.ndarray:
    """Per-view conditioning depth: foreground scaled to [0, 1], background
    fixed at 1 (farthest), box-averaged down to the latent resolution."""
    depth = frame.depth
    fg = frame.foreground
    out = np.ones(depth.shape, dtype=np.float32)
    if fg.any():
        lo, hi = depth[fg].min(), depth[fg].max()
        if hi > lo:
            out[fg] = ((depth[fg] - lo) / (hi - lo)).astype(np.float32)
        else:
            out[fg] = 0.0
    scale = getattr(codec, "spatial_scale", 1)
    if scale > 1:
        h, w = out.shape
        out = out.reshape(h // scale, scale, w // scale, scale).mean(axis=(1, 3))
    return out


class MultiviewEngine:
    """Shared per-step machinery for the global and repaint samplers."""

    def __init__(self, mesh: Mesh, views: ViewSet, denoiser, codec,
                 schedule: NoiseSchedule, merge_policy: MergePolicy,
                 texture_shape, *, prompts=None, guidance=None,
                 write_mask=None, projectors=None, atlas=None, workers: int = 1,
                 stage_name: str = "sample"):
        self.mesh = mesh
        self.views = views
        self.denoiser = denoiser
        self.codec = codec
        self.schedule = schedule
        self.policy = merge_policy
        self.workers = max(1, workers)
        self.stage_name = stage_name
        n = views.graph.num_views
        self.prompts = list(prompts) if prompts is not None else [""] * n
        if guidance is None:
            guidance = np.full(schedule.inference_steps, 1.0)
        self.guidance = np.asarray(guidance, dtype=np.float64)
        if atlas is None:
            atlas = build_atlas_table(mesh, texture_shape)
        self.atlas = atlas
        if projectors is None:
            projectors = self._map(
                lambda cam: Projector(mesh, cam, texture_shape, atlas=self.atlas),
                views.cameras,
            )
        self.projectors = projectors
        self.write_mask = write_mask
        for vid, proj in enumerate(self.projectors):
            w = proj.texel.weight_image
            if write_mask is not None:
                w = w * write_mask
            if not (w > 0).any():
                logger.warning(
                    "%s: view %d has no visible texel coverage", stage_name, vid
                )
        self.weight_images = []
        for proj in self.projectors:
            w = proj.texel.weight_image
            if write_mask is not None:
                w = np.where(write_mask, w, 0.0).astype(np.float32)
            self.weight_images.append(w)
        self.depths = [normalized_depth(p.frame, codec) for p in self.projectors]
        sample_cam: Camera = views.cameras[0]
        self.latent_shape = codec.latent_shape(sample_cam.height, sample_cam.width)
        self.last_barrier_seconds = 0.0

    # -- helpers -------------------------------------------------------------
    def _map(self, fn, items):
        if self.workers == 1 or len(items) <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))

    def view_ids(self):
        return range(self.views.graph.num_views)

    def initial_latents(self, streams) -> list:
        return [
            s.standard_normal(self.latent_shape).astype(np.float32) for s in streams
        ]

    def draw_noise(self, streams) -> list:
        return [
            s.standard_normal(self.latent_shape).astype(np.float32) for s in streams
        ]

    def denoise_all(self, latents, t: int, step_index: int) -> list:
        if self.denoiser is None:
            raise ConfigError("engine has no denoiser bound")
        requests = [
            DenoiseRequest(
                view_id=self.views.view_ids[v],
                latent=latents[v],
                timestep=t,
                prompt=self.prompts[v],
                depth=self.depths[v],
                guidance_scale=float(self.guidance[step_index]),
            )
            for v in self.view_ids()
        ]
        try:
            eps = self.denoiser.denoise_batch(requests, self.views.graph)
        except Exception as exc:
            raise StepError(
                f"denoiser failed: {exc}", stage=self.stage_name,
                step_index=step_index, timestep=t,
            ) from exc
        if len(eps) != len(requests):
            raise StepError(
                f"denoiser returned {len(eps)} outputs for {len(requests)} views",
                stage=self.stage_name, step_index=step_index, timestep=t,
            )
        for v, e in enumerate(eps):
            if e.shape != latents[v].shape:
                raise StepError(
                    f"epsilon shape {e.shape} != latent {latents[v].shape}",
                    stage=self.stage_name, step_index=step_index, timestep=t,
                    view_id=v,
                )
        return eps

    def estimates(self, latents, eps, t: int) -> list:
        return self._map(
            lambda v: self.schedule.estimate_x0(latents[v], eps[v], t).astype(np.float32),
            list(self.view_ids()),
        )

    def project_views(self, x0s) -> tuple[list, list]:
        """Decode each view's clean estimate and back-project into UV space.

        Returns (images, per-view TextureMaps); writes are restricted to the
        engine's write mask when one is set.
        """

        def work(v):
            image = self.codec.decode(x0s[v])
            tex = self.projectors[v].inverse_render(image)
            if self.write_mask is not None:
                keep = self.write_mask
                tex = TextureMap(
                    tex.texels * keep[..., None].astype(np.float32),
                    np.where(keep, tex.weight, 0.0).astype(np.float32),
                )
            return image, tex

        results = self._map(work, list(self.view_ids()))
        images = [r[0] for r in results]
        textures = [r[1] for r in results]
        return images, textures

    def merge(self, textures, step_index: int) -> TextureMap:
        exponent = self.policy.exponent_at(step_index, self.schedule.inference_steps)
        started = time.perf_counter()
        merged = merge_textures(textures, self.weight_images, exponent, self.policy)
        self.last_barrier_seconds = time.perf_counter() - started
        return merged

    def substitute(self, merged: TextureMap, images) -> list:
        """Composite the merged texture's re-renders over the original
        decoded images (background kept bit-exact), then encode."""

        def work(v):
            bundle = self.projectors[v].render(merged)
            mask = bundle.foreground_mask[..., None]
            composite = np.where(mask, bundle.color, images[v])
            return self.codec.encode(composite)

        return self._map(work, list(self.view_ids()))

    def fused_x0(self, x0s, step_index: int):
        images, textures = self.project_views(x0s)
        merged = self.merge(textures, step_index)
        return self.substitute(merged, images), merged

    def posterior_all(self, latents, x0s, t: int, t_prev: int, noise) -> list:
        return self._map(
            lambda v: self.schedule.posterior_step(
                latents[v], x0s[v], t, noise[v], t_prev
            ).astype(np.float32),
            list(self.view_ids()),
        )

    def final_texture(self, latents) -> tuple[TextureMap, list]:
        _, textures = self.project_views(latents)
        merged = self.merge(textures, self.schedule.inference_steps - 1)
        return merged, textures


def multiview_sample(
    mesh: Mesh,
    views: ViewSet,
    denoiser,
    codec,
    schedule: NoiseSchedule,
    merge_policy: MergePolicy,
    plan: StagePlan,
    streams,
    texture_shape,
    *,
    prompts=None,
    guidance=None,
    write_mask=None,
    engine: MultiviewEngine | None = None,
    initial_latents=None,
    on_step=None,
    workers: int = 1,
) -> SampleResult:
    """Run the full staged multi-view chain and return the fused texture.

    streams: one np.random.Generator per view (seed ownership is the
    caller's; see texsync.seeds). plan decides which steps substitute the
    fused texture into the posterior mean.
    """
    if len(plan.modes) != schedule.inference_steps:
        raise ConfigError("stage plan length != inference steps")
    if engine is None:
        engine = MultiviewEngine(
            mesh, views, denoiser, codec, schedule, merge_policy, texture_shape,
            prompts=prompts, guidance=guidance, write_mask=write_mask,
            workers=workers,
        )
    if len(streams) != views.graph.num_views:
        raise ConfigError("need one RNG stream per view")
    latents = (
        [l.copy() for l in initial_latents]
        if initial_latents is not None
        else engine.initial_latents(streams)
    )
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
        if plan.resolved_mode(i) == FUSED:
            x0s, merged = engine.fused_x0(x0s, i)
        latents = engine.posterior_all(latents, x0s, int(t), t_prev, noise)
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
