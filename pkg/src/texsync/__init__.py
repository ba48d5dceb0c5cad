"""texsync: multi-view-consistent texture synthesis for indoor scene meshes."""

from .errors import ConfigError, ProtocolError, StepError, TexsyncError
from .geometry import (
    Camera,
    Mesh,
    TextureMap,
    ViewRenderBundle,
    load_obj,
    load_png,
    merge_meshes,
    pack_instance_charts,
    save_obj,
    save_png,
)
from .raster import Projector, active_backend, inverse_render, render, weight_map

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "ConfigError",
    "Mesh",
    "ProtocolError",
    "Projector",
    "StepError",
    "TextureMap",
    "TexsyncError",
    "ViewRenderBundle",
    "active_backend",
    "inverse_render",
    "load_obj",
    "load_png",
    "merge_meshes",
    "pack_instance_charts",
    "render",
    "save_obj",
    "save_png",
    "weight_map",
]
