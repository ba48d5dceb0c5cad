"""Pipeline configuration: YAML schema, defaults, validation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .seeds import check_seed

BACKENDS = ("target", "consensus_toy", "remote")
CODECS = ("identity", "downscale")
ENDPOINT_ENV_VAR = "TEXSYNC_REMOTE_ENDPOINT"
_TEXTURE_RESOLUTIONS = (256, 512, 1024, 2048, 4096)


@dataclass
class CameraOverrides:
    count: int | None = None
    fov_degrees: float | None = None


@dataclass
class PipelineConfig:
    scene: str
    output_dir: str
    seed: int = 42
    texture_resolution: int = 256
    image_size: tuple = (128, 128)
    backend: str = "target"
    target_texture: str | None = None
    remote_endpoint: str = "127.0.0.1:7432"
    remote_timeout: float = 30.0
    codec: str = "identity"
    codec_scale: int = 2
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    inference_steps: int = 50
    gamma: float = 1e-8
    exp_start: float = 1.0
    exp_end: float = 6.0
    renormalized_merge: bool = True
    guidance_start: float = 10.0
    guidance_end: float = 7.0
    stage_fractions: tuple = (0.9, 0.5, 0.3)
    phase_fractions: tuple = (0.8, 0.5, 0.3)
    fused_parity: int = 0
    ring_include_self: bool = True
    strict_painted_noise_level: bool = False
    cameras: dict = field(default_factory=dict)
    workers: int = 1
    dump_intermediates: bool = False

    def validate(self):
        if not os.path.exists(self.scene):
            raise ConfigError(f"scene manifest not found: {self.scene}")
        check_seed(self.seed)
        if self.texture_resolution not in _TEXTURE_RESOLUTIONS:
            raise ConfigError(
                f"texture_resolution must be a power of two in "
                f"[{_TEXTURE_RESOLUTIONS[0]}, {_TEXTURE_RESOLUTIONS[-1]}], "
                f"got {self.texture_resolution}"
            )
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend in ("target", "consensus_toy"):
            if not self.target_texture:
                raise ConfigError(f"backend {self.backend!r} requires target_texture")
            if not os.path.exists(self.target_texture):
                raise ConfigError(f"target_texture not found: {self.target_texture}")
        if self.codec not in CODECS:
            raise ConfigError(f"codec must be one of {CODECS}, got {self.codec!r}")
        w, h = self.image_size
        if w < 8 or h < 8:
            raise ConfigError("image_size too small")
        scale = self.codec_scale if self.codec == "downscale" else 1
        if w % scale or h % scale:
            raise ConfigError("image_size must be divisible by the codec scale")
        if self.backend == "consensus_toy" and ((w // scale) % 8 or (h // scale) % 8):
            raise ConfigError("consensus_toy requires latent dimensions divisible by 8")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if len(self.stage_fractions) != 3 or len(self.phase_fractions) != 3:
            raise ConfigError("stage/phase fractions must have three entries")
        return self


def _get(raw: dict, key: str, default):
    value = raw.get(key, default)
    return default if value is None else value


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    if "scene" not in raw:
        raise ConfigError(f"{path}: missing required key 'scene'")
    base = os.path.dirname(os.path.abspath(path))

    def rel(p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(base, p)

    schedule = _get(raw, "schedule", {})
    merge = _get(raw, "merge", {})
    guidance = _get(raw, "guidance", {})
    remote = _get(raw, "remote", {})
    codec = _get(raw, "codec", {})
    endpoint = os.environ.get(
        ENDPOINT_ENV_VAR, _get(remote, "endpoint", "127.0.0.1:7432")
    )
    config = PipelineConfig(
        scene=rel(raw["scene"]),
        output_dir=rel(_get(raw, "output_dir", "out")),
        seed=int(_get(raw, "seed", 42)),
        texture_resolution=int(_get(raw, "texture_resolution", 256)),
        image_size=tuple(int(v) for v in _get(raw, "image_size", (128, 128))),
        backend=str(_get(raw, "backend", "target")),
        target_texture=rel(raw.get("target_texture")),
        remote_endpoint=str(endpoint),
        remote_timeout=float(_get(remote, "timeout_seconds", 30.0)),
        codec=str(_get(codec, "kind", "identity")),
        codec_scale=int(_get(codec, "scale", 2)),
        train_steps=int(_get(schedule, "train_steps", 1000)),
        beta_start=float(_get(schedule, "beta_start", 1e-4)),
        beta_end=float(_get(schedule, "beta_end", 0.02)),
        inference_steps=int(_get(schedule, "inference_steps", 50)),
        gamma=float(_get(merge, "gamma", 1e-8)),
        exp_start=float(_get(merge, "exp_start", 1.0)),
        exp_end=float(_get(merge, "exp_end", 6.0)),
        renormalized_merge=bool(_get(merge, "renormalized", True)),
        guidance_start=float(_get(guidance, "start", 10.0)),
        guidance_end=float(_get(guidance, "end", 7.0)),
        stage_fractions=tuple(float(f) for f in _get(raw, "stage_fractions", (0.9, 0.5, 0.3))),
        phase_fractions=tuple(float(f) for f in _get(raw, "phase_fractions", (0.8, 0.5, 0.3))),
        fused_parity=int(_get(raw, "fused_parity", 0)),
        ring_include_self=bool(_get(raw, "ring_include_self", True)),
        strict_painted_noise_level=bool(_get(raw, "strict_painted_noise_level", False)),
        cameras=_get(raw, "cameras", {}),
        workers=int(_get(raw, "workers", 1)),
        dump_intermediates=bool(_get(raw, "dump_intermediates", False)),
    )
    return config.validate()
