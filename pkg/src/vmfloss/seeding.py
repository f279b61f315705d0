"""Named random streams derived from one run seed."""
from __future__ import annotations

import os

import numpy as np

STREAMS = ("init", "batching", "sampler", "synthetic", "eval", "split")


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; the same (seed, name) always agrees."""
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}; expected one of {STREAMS}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS.index(name),))
    return np.random.default_rng(ss)


def streams(seed: int) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in STREAMS}


def resolve_seed(config_seed: int) -> tuple[int, bool]:
    """Apply the RUN_SEED override; returns (seed, overridden)."""
    env = os.environ.get("RUN_SEED")
    if env is None or env.strip() == "":
        return int(config_seed), False
    return int(env), True


def replicate_seed(seed: int, replicate: int) -> int:
    """Seed of replicate ``replicate`` (replicate 0 keeps the base seed)."""
    if replicate == 0:
        return int(seed)
    return int(np.random.SeedSequence(entropy=int(seed), spawn_key=(100, replicate)).generate_state(1, np.uint64)[0] >> 1)
