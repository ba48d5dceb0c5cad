"""Exception taxonomy shared across the engine.

ConfigError covers anything wrong with user-supplied inputs (config files,
manifests, meshes, cameras) and maps to CLI exit code 2. Everything else that
goes wrong mid-run maps to exit code 3.
"""


class TexsyncError(Exception):
    """Base class for all engine errors."""


class ConfigError(TexsyncError):
    """Invalid configuration, manifest, mesh or camera input."""


class ProtocolError(TexsyncError):
    """Remote denoiser wire-protocol violation (version, shape, coverage)."""


class StepError(TexsyncError):
    """Failure inside the sampling loop, annotated with step context."""

    def __init__(self, message, *, stage=None, step_index=None, timestep=None, view_id=None):
        self.stage = stage
        self.step_index = step_index
        self.timestep = timestep
        self.view_id = view_id
        ctx = []
        if stage is not None:
            ctx.append(f"stage={stage}")
        if step_index is not None:
            ctx.append(f"step={step_index}")
        if timestep is not None:
            ctx.append(f"t={timestep}")
        if view_id is not None:
            ctx.append(f"view={view_id}")
        suffix = f" [{', '.join(ctx)}]" if ctx else ""
        super().__init__(message + suffix)
