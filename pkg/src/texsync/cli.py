"""Command-line interface.

    texsync run --config scene.yaml [--seed N] [--backend B] [--dump-intermediates]
    texsync validate --config scene.yaml
    texsync render --mesh room.obj --texture tex.png --camera "pos=0,0,1;look=1,0,1" --out view.png

Exit codes: 0 success, 2 configuration error, 3 runtime error. The remote
denoiser endpoint can be overridden with TEXSYNC_REMOTE_ENDPOINT.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import BACKENDS, load_config
from .errors import ConfigError, TexsyncError
from .geometry import Camera, TextureMap, load_obj, load_png, save_png
from .raster import Projector, build_atlas_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def parse_camera_spec(spec: str) -> Camera:
    """Parse "pos=x,y,z;look=x,y,z[;up=x,y,z][;fov=60][;res=WxH]"."""
    fields = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"camera spec entry {part!r} is not key=value")
        key, value = part.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        pos = [float(v) for v in fields["pos"].split(",")]
        look = [float(v) for v in fields["look"].split(",")]
    except KeyError as exc:
        raise ConfigError(f"camera spec missing {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigError(f"camera spec has malformed numbers: {exc}") from exc
    up = [float(v) for v in fields.get("up", "0,0,1").split(",")]
    fov = float(fields.get("fov", "60"))
    res = fields.get("res", "256x256")
    try:
        width, height = (int(v) for v in res.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"camera res must be WxH, got {res!r}") from exc
    return Camera(
        position=pos, look_at=look, up=up, fov_degrees=fov, width=width, height=height
    )


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.backend is not None:
        config.backend = args.backend
    if args.dump_intermediates:
        config.dump_intermediates = True
    config.validate()
    from .pipeline import run_pipeline

    report = run_pipeline(config)
    print(
        f"done: stage1 {report['stages']['stage1']['seconds']:.1f}s "
        f"(coverage {report['stages']['stage1']['coverage_fraction']:.1%}), "
        f"stage2 {report['stages']['stage2']['seconds']:.1f}s "
        f"(coverage {report['stages']['stage2']['coverage_fraction']:.1%}) "
        f"-> {config.output_dir}"
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    config = load_config(args.config)
    from .scene import SceneManifest

    manifest = SceneManifest.load(config.scene)
    mesh = manifest.build_scene_mesh()
    manifest.validate_mesh_ids(mesh)
    atlas = build_atlas_table(
        mesh, (config.texture_resolution, config.texture_resolution)
    )
    charted = float((atlas.face_id >= 0).mean())
    print(
        f"ok: {len(manifest.records())} instances, {mesh.num_faces} faces, "
        f"atlas {config.texture_resolution}^2 ({charted:.1%} charted, "
        f"{atlas.overlap_count} overlapping texels)"
    )
    return EXIT_OK


def cmd_render(args) -> int:
    mesh = load_obj(args.mesh)
    camera = parse_camera_spec(args.camera)
    values = load_png(args.texture)
    atlas = build_atlas_table(mesh, values.shape[:2])
    texture = TextureMap(values, (atlas.face_id >= 0).astype(np.float32))
    bundle = Projector(mesh, camera, values.shape[:2], atlas=atlas).render(texture)
    save_png(args.out, bundle.color)
    print(f"rendered {args.out} ({int(bundle.foreground_mask.sum())} foreground pixels)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texsync",
        description="Multi-view-consistent texture synthesis for indoor scenes",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the two-stage texturing pipeline")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--backend", choices=BACKENDS)
    p_run.add_argument("--dump-intermediates", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="validate a config and its scene")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_render = sub.add_parser("render", help="render a textured mesh from a camera")
    p_render.add_argument("--mesh", required=True)
    p_render.add_argument("--texture", required=True)
    p_render.add_argument("--camera", required=True)
    p_render.add_argument("--out", default="render.png")
    p_render.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TexsyncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:
        import traceback

        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
