"""Deterministic RNG sub-streams.

All randomness in the pipeline flows from one master seed through named
sub-streams so that changing one stage's draws never perturbs another
stage. Per-entity streams additionally fold in the entity id, which makes
walk generation independent of scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Stable stream names used by the pipeline.
STREAM_WALKS = "walks"
STREAM_AUGMENT = "augment"
STREAM_INIT = "init"
STREAM_SYNTH = "synth"
STREAM_BATCH = "batch"
STREAM_SPLIT = "split"


def _name_key(name: str) -> int:
    # Python's hash() is salted per process; use a stable digest instead.
    return int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "big")


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named sub-stream of a master seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, _name_key(name)]))


def entity_stream(seed: int, name: str, entity_id: int) -> np.random.Generator:
    """Generator for one entity within a named sub-stream."""
    return np.random.default_rng(np.random.SeedSequence([seed, _name_key(name), entity_id]))
