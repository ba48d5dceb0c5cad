#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-NumPy fallback.

    python benchmarks/bench_kernels.py [--texture 512] [--image 256] [--repeats 3]

Times the per-view table build (rasterization + visibility) and the per-step
render/inverse pair on a furnished room, for each available backend.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from texsync.geometry import Camera, TextureMap, pack_instance_charts
from texsync.primitives import box
from texsync.raster import Projector, active_backend, build_atlas_table


def build_scene(grid=0):
    """Furnished room; grid > 0 swaps in a tessellated terrain of
    2*grid^2 faces, where the per-face kernel loops dominate."""
    if grid:
        from texsync.geometry import Mesh

        ax = np.linspace(-2, 2, grid + 1)
        xs, ys = np.meshgrid(ax, ax, indexing="xy")
        zs = 0.3 * np.sin(xs * 2.1) * np.cos(ys * 1.7)
        vertices = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
        faces, uv = [], []
        uaxis = np.linspace(0.01, 0.99, grid + 1)
        for i in range(grid):
            for j in range(grid):
                a = i * (grid + 1) + j
                b, c, d = a + 1, a + grid + 2, a + grid + 1
                faces += [[a, b, c], [a, c, d]]
                ua, ub, va, vb = uaxis[j], uaxis[j + 1], uaxis[i], uaxis[i + 1]
                uv += [[[ua, va], [ub, va], [ub, vb]], [[ua, va], [ub, vb], [ua, vb]]]
        faces = np.asarray(faces, dtype=np.int32)
        return Mesh(vertices, faces, np.asarray(uv), np.zeros(len(faces), np.int32))
    room = box((0, 0, 1.25), (4.0, 3.0, 2.5), instance=0, inward=True)
    bed = box((-0.9, 0.4, 0.3), (1.6, 1.1, 0.6), instance=1)
    chair = box((1.1, -0.7, 0.35), (0.5, 0.5, 0.7), instance=2)
    return pack_instance_charts([(room, 0), (bed, 1), (chair, 2)])


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_backend(backend, mesh, camera, tex_shape, repeats):
    atlas = build_atlas_table(mesh, tex_shape, backend=backend)
    rng = np.random.default_rng(0)
    texture = TextureMap(
        rng.uniform(0, 1, (*tex_shape, 3)).astype(np.float32),
        (atlas.face_id >= 0).astype(np.float32),
    )
    results = {}
    results["atlas rasterization"] = time_call(
        lambda: build_atlas_table(mesh, tex_shape, backend=backend), repeats
    )
    results["view table build"] = time_call(
        lambda: Projector(mesh, camera, tex_shape, atlas=atlas, backend=backend), repeats
    )
    projector = Projector(mesh, camera, tex_shape, atlas=atlas, backend=backend)
    bundle = projector.render(texture)
    results["render"] = time_call(lambda: projector.render(texture), repeats)
    results["inverse render"] = time_call(
        lambda: projector.inverse_render(bundle.color), repeats
    )
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--texture", type=int, default=512)
    parser.add_argument("--image", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument(
        "--grid", type=int, default=32,
        help="terrain tessellation (2*grid^2 faces); 0 uses the 36-face room",
    )
    args = parser.parse_args()

    mesh = build_scene(args.grid)
    if args.grid:
        camera = Camera(
            position=(0.4, -2.2, 2.6), look_at=(0, 0, 0), up=(0, 0, 1),
            fov_degrees=55, width=args.image, height=args.image,
        )
    else:
        camera = Camera(
            position=(1.2, 0.9, 1.3), look_at=(0, 0, 1.25), up=(0, 0, 1),
            fov_degrees=60, width=args.image, height=args.image,
        )
    tex_shape = (args.texture, args.texture)

    backends = ["python"]
    if active_backend() == "compiled":
        backends.insert(0, "compiled")
    else:
        print("note: compiled extension not built; benchmarking fallback only")

    print(
        f"scene: {mesh.num_faces} faces, texture {args.texture}^2, "
        f"image {args.image}^2, best of {args.repeats}"
    )
    all_results = {b: bench_backend(b, mesh, camera, tex_shape, args.repeats) for b in backends}
    names = list(next(iter(all_results.values())))
    header = f"{'operation':<22}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name in names:
        row = f"{name:<22}"
        for b in backends:
            row += f"{all_results[b][name] * 1000:>10.1f}ms"
        if len(backends) == 2:
            ratio = all_results["python"][name] / all_results["compiled"][name]
            row += f"{ratio:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
