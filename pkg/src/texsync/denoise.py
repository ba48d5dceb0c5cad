"""Denoiser contract, built-in analytic denoisers, cross-view attention,
guidance schedule, and image/latent codecs.

A denoiser is called once per timestep with the whole batch of views, so
implementations are free to exchange information across views; the built-in
consensus denoiser does exactly that through the cross-view attention
operator. Implementations must be deterministic functions of the request
batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class ViewGraph:
    """Per-view lists of related views (ordered; may include the view itself)."""

    num_views: int
    related: tuple

    def __post_init__(self):
        if len(self.related) != self.num_views:
            raise ConfigError("related list count != num_views")
        for ids in self.related:
            if not ids:
                raise ConfigError("every view needs at least one related view")
            for r in ids:
                if not (0 <= r < self.num_views):
                    raise ConfigError(f"related view id {r} out of range")

    @classmethod
    def ring(cls, num_views: int, include_self: bool = True) -> "ViewGraph":
        """Left neighbor, (self,) right neighbor; deduplicated for tiny N."""
        related = []
        for n in range(num_views):
            ids = [(n - 1) % num_views] + ([n] if include_self else []) + [(n + 1) % num_views]
            seen, uniq = set(), []
            for r in ids:
                if r not in seen:
                    seen.add(r)
                    uniq.append(r)
            related.append(tuple(uniq))
        return cls(num_views, tuple(related))

    @classmethod
    def complete(cls, num_views: int) -> "ViewGraph":
        return cls(num_views, tuple(tuple(range(num_views)) for _ in range(num_views)))


def related_view_attention(queries, keys, values, graph: ViewGraph):
    """Scaled dot-product attention where each view attends over the
    concatenated keys/values of its related views.

    queries/keys/values: sequences of per-view arrays shaped (..., T, d)
    with identical token counts and dimension across views; leading batch
    axes are supported. Returns the per-view outputs in view order.
    """
    if not (len(queries) == len(keys) == len(values) == graph.num_views):
        raise ConfigError("attention inputs must cover every view in the graph")
    d = queries[0].shape[-1]
    for arrs in (queries, keys, values):
        for a in arrs:
            if a.shape[-1] != d or a.shape != arrs[0].shape:
                raise ConfigError("attention arrays must share shape and dimension")
    outputs = []
    for n in range(graph.num_views):
        k_cat = np.concatenate([keys[r] for r in graph.related[n]], axis=-2)
        v_cat = np.concatenate([values[r] for r in graph.related[n]], axis=-2)
        logits = queries[n] @ np.swapaxes(k_cat, -1, -2) / np.sqrt(d)
        logits -= logits.max(axis=-1, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=-1, keepdims=True)
        outputs.append(weights @ v_cat)
    return outputs


def guidance_schedule(steps: int, start: float = 10.0, end: float = 7.0) -> np.ndarray:
    """Classifier-free guidance scale per inference step, linear in the
    step index from `start` (first step) to `end` (last step)."""
    if steps == 1:
        return np.array([start])
    return start + (end - start) * np.arange(steps) / (steps - 1)


def apply_guidance(eps_uncond: np.ndarray, eps_cond: np.ndarray, scale: float) -> np.ndarray:
    """eps = eps_uncond + g (eps_cond - eps_uncond); g = 1 returns eps_cond."""
    if scale < 1.0:
        raise ConfigError("guidance scale must be >= 1")
    if scale == 1.0:
        return eps_cond
    return eps_uncond + scale * (eps_cond - eps_uncond)


# ---------------------------------------------------------------------------
# Codecs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityCodec:
    """Pass-through image<->latent conversion (the desk-scale default)."""

    spatial_scale: int = 1

    def encode(self, image: np.ndarray) -> np.ndarray:
        return np.asarray(image, dtype=np.float32).copy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return np.asarray(latent, dtype=np.float32).copy()

    def latent_shape(self, height: int, width: int, channels: int = 3):
        return (height, width, channels)


@dataclass(frozen=True)
class DownscaleCodec:
    """Box-filter downsampling on encode, bilinear upsampling on decode."""

    spatial_scale: int = 2

    def __post_init__(self):
        if self.spatial_scale < 1:
            raise ConfigError("spatial_scale must be >= 1")

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float32)
        h, w = image.shape[:2]
        s = self.spatial_scale
        if h % s or w % s:
            raise ConfigError(f"resolution {(h, w)} not divisible by scale {s}")
        return image.reshape(h // s, s, w // s, s, -1).mean(axis=(1, 3))

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float32)
        h, w = latent.shape[:2]
        s = self.spatial_scale
        out_h, out_w = h * s, w * s
        ys = (np.arange(out_h) + 0.5) / s - 0.5
        xs = (np.arange(out_w) + 0.5) / s - 0.5
        y0 = np.clip(np.floor(ys).astype(int), 0, max(h - 2, 0))
        x0 = np.clip(np.floor(xs).astype(int), 0, max(w - 2, 0))
        fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
        fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        v00 = latent[np.ix_(y0, x0)]
        v01 = latent[np.ix_(y0, x1)]
        v10 = latent[np.ix_(y1, x0)]
        v11 = latent[np.ix_(y1, x1)]
        top = v00 * (1 - fx) + v01 * fx
        bot = v10 * (1 - fx) + v11 * fx
        return (top * (1 - fy) + bot * fy).astype(np.float32)

    def latent_shape(self, height: int, width: int, channels: int = 3):
        if height % self.spatial_scale or width % self.spatial_scale:
            raise ConfigError("resolution not divisible by codec scale")
        return (height // self.spatial_scale, width // self.spatial_scale, channels)


def make_codec(kind: str, scale: int = 2):
    if kind == "identity":
        return IdentityCodec()
    if kind == "downscale":
        return DownscaleCodec(scale)
    raise ConfigError(f"unknown codec {kind!r}")


# ---------------------------------------------------------------------------
# Denoiser contract and built-in implementations
# ---------------------------------------------------------------------------

@dataclass
class DenoiseRequest:
    """One view's slice of a batched denoise call."""

    view_id: int
    latent: np.ndarray  # (h, w, c) float32
    timestep: int
    prompt: str
    depth: np.ndarray  # (h, w) normalized to [0, 1], background = 1
    guidance_scale: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.latent)):
            raise ConfigError(f"view {self.view_id}: latent contains non-finite values")
        if self.depth.shape != self.latent.shape[:2]:
            raise ConfigError(
                f"view {self.view_id}: depth {self.depth.shape} does not match "
                f"latent {self.latent.shape[:2]}"
            )
        if self.guidance_scale < 1.0:
            raise ConfigError("guidance_scale must be >= 1")


class TargetDenoiser:
    """Analytic denoiser pulling each view toward a fixed target latent.

    Emits the exact noise residual (x_t - sqrt(abar_t) x0*) / sqrt(1-abar_t),
    so the estimated clean image is the target at every step. Prompts are
    recorded but do not alter the output; guidance is exercised degenerately
    (conditional == unconditional).
    """

    def __init__(self, schedule: NoiseSchedule, targets: dict[int, np.ndarray]):
        self.schedule = schedule
        self.targets = {k: np.asarray(v, dtype=np.float32) for k, v in targets.items()}
        self.seen_prompts: list[str] = []

    def _epsilon(self, request: DenoiseRequest) -> np.ndarray:
        target = self.targets.get(request.view_id)
        if target is None:
            raise ConfigError(f"no target for view {request.view_id}")
        if target.shape != request.latent.shape:
            raise ConfigError(
                f"view {request.view_id}: target {target.shape} != latent "
                f"{request.latent.shape}"
            )
        ab = np.float32(np.sqrt(self.schedule.alpha_bar(request.timestep)))
        rb = np.float32(np.sqrt(1.0 - self.schedule.alpha_bar(request.timestep)))
        return (request.latent - ab * target) / rb

    def denoise_batch(self, requests, graph: ViewGraph):
        del graph
        out = []
        for req in requests:
            self.seen_prompts.append(req.prompt)
            eps = self._epsilon(req)
            out.append(apply_guidance(eps, eps, req.guidance_scale))
        return out


class ConsensusToyDenoiser:
    """Target denoiser whose targets first reach cross-view consensus.

    Per-view targets are cut into patch tokens; at every patch position each
    view attends over the matching tokens of its related views, and the
    attention outputs become the mixed target the exact-noise formula aims
    at. With identical targets the attention is an identity (all values
    equal), reproducing TargetDenoiser.
    """

    def __init__(self, schedule: NoiseSchedule, targets: dict[int, np.ndarray],
                 patch_size: int = 8):
        self.schedule = schedule
        self.patch_size = patch_size
        self.targets = {k: np.asarray(v, dtype=np.float32) for k, v in targets.items()}
        self.seen_prompts: list[str] = []

    def _tokens(self, target: np.ndarray) -> np.ndarray:
        h, w, c = target.shape
        p = self.patch_size
        if h % p or w % p:
            raise ConfigError(f"latent {h}x{w} not divisible by patch size {p}")
        grid = target.reshape(h // p, p, w // p, p, c)
        return grid.transpose(0, 2, 1, 3, 4).reshape((h // p) * (w // p), 1, p * p * c)

    def _untokens(self, tokens: np.ndarray, shape) -> np.ndarray:
        h, w, c = shape
        p = self.patch_size
        grid = tokens.reshape(h // p, w // p, p, p, c).transpose(0, 2, 1, 3, 4)
        return grid.reshape(h, w, c)

    def mixed_targets(self, view_ids, graph: ViewGraph) -> list[np.ndarray]:
        token_arrays = []
        shape = None
        for vid in view_ids:
            target = self.targets.get(vid)
            if target is None:
                raise ConfigError(f"no target for view {vid}")
            shape = target.shape
            token_arrays.append(self._tokens(target.astype(np.float64)))
        mixed = related_view_attention(token_arrays, token_arrays, token_arrays, graph)
        return [self._untokens(m, shape).astype(np.float32) for m in mixed]

    def denoise_batch(self, requests, graph: ViewGraph):
        mixed = self.mixed_targets([r.view_id for r in requests], graph)
        out = []
        for req, target in zip(requests, mixed):
            self.seen_prompts.append(req.prompt)
            ab = np.float32(np.sqrt(self.schedule.alpha_bar(req.timestep)))
            rb = np.float32(np.sqrt(1.0 - self.schedule.alpha_bar(req.timestep)))
            eps = (req.latent - ab * target) / rb
            out.append(apply_guidance(eps, eps, req.guidance_scale))
        return out
