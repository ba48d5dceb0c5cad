"""Writes a ready-to-run demo scene: a furnished room, its manifest, a
ground-truth texture for the analytic backends, and a pipeline config.

    python -m texsync.demo out_dir [--texture-resolution 256]
    texsync run --config out_dir/config.yaml
"""

from __future__ import annotations

import argparse
import os

import numpy as np

from .geometry import save_obj, save_png
from .primitives import box


def smooth_texture(height, width, seed=0, channels=3) -> np.ndarray:
    """Low-frequency colorful field in [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    ys, xs = np.meshgrid(
        np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij"
    )
    out = np.zeros((height, width, channels), dtype=np.float64)
    for ch in range(channels):
        acc = np.zeros_like(xs)
        for _ in range(3):
            fx, fy = rng.uniform(0.4, 1.0, 2)
            phase = rng.uniform(0, 2 * np.pi, 2)
            acc += np.sin(2 * np.pi * fx * xs + phase[0]) * np.sin(
                2 * np.pi * fy * ys + phase[1]
            )
        out[..., ch] = acc
    lo, hi = out.min(), out.max()
    return (0.1 + 0.8 * (out - lo) / (hi - lo)).astype(np.float32)


MANIFEST = """\
prompt: "A cozy demo bedroom"
style: "cozy"
room: {id: 0, label: "room frame", mesh: "room.obj"}
instances:
  - {id: 1, label: "single bed", mesh: "bed.obj"}
  - {id: 2, label: "chair", mesh: "chair.obj"}
"""

CONFIG = """\
scene: scene.yaml
output_dir: out
seed: 42
texture_resolution: {res}
image_size: [{img}, {img}]
backend: target
target_texture: ground_truth.png
workers: 2
"""


def write_demo_scene(directory, texture_resolution=256, image_size=96, seed=0):
    os.makedirs(directory, exist_ok=True)
    room = box((0, 0, 1.25), (4.0, 3.0, 2.5), instance=0, inward=True)
    bed = box((-0.9, 0.4, 0.3), (1.6, 1.1, 0.6), instance=1)
    chair = box((1.1, -0.7, 0.35), (0.5, 0.5, 0.7), instance=2)
    save_obj(os.path.join(directory, "room.obj"), room)
    save_obj(os.path.join(directory, "bed.obj"), bed)
    save_obj(os.path.join(directory, "chair.obj"), chair)
    save_png(
        os.path.join(directory, "ground_truth.png"),
        smooth_texture(texture_resolution, texture_resolution, seed=seed),
    )
    with open(os.path.join(directory, "scene.yaml"), "w", encoding="utf-8") as fh:
        fh.write(MANIFEST)
    config_path = os.path.join(directory, "config.yaml")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(CONFIG.format(res=texture_resolution, img=image_size))
    return config_path


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("directory")
    parser.add_argument("--texture-resolution", type=int, default=256)
    parser.add_argument("--image-size", type=int, default=96)
    args = parser.parse_args(argv)
    path = write_demo_scene(args.directory, args.texture_resolution, args.image_size)
    print(f"wrote demo scene; run: texsync run --config {path}")


if __name__ == "__main__":
    main()
