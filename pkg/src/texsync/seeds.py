"""Deterministic RNG stream derivation.

Every (stage, instance, view) triple owns one independent generator derived
from the master seed via NumPy's SeedSequence spawn keys:

    SeedSequence(master_seed, spawn_key=(stage_index, instance_id + 1, view))

stage_index is 1 for the global texturing stage and 2 for the repaint stage;
instance_id is -1 (encoded 0) for stage 1. Streams are consumed strictly
per-view inside the samplers, so worker-pool size never changes results.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

STAGE_GLOBAL = 1
STAGE_REPAINT = 2


def check_seed(seed: int):
    if not isinstance(seed, int) or not (0 <= seed < 2**64):
        raise ConfigError("seed must be an unsigned 64-bit integer")


def view_stream(master_seed: int, stage_index: int, instance_id: int, view: int):
    check_seed(master_seed)
    seq = np.random.SeedSequence(
        master_seed, spawn_key=(stage_index, instance_id + 1, view)
    )
    return np.random.default_rng(seq)


def view_streams(master_seed: int, stage_index: int, instance_id: int, count: int):
    return [view_stream(master_seed, stage_index, instance_id, v) for v in range(count)]
