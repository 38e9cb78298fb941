"""Deterministic seed derivation.

Every random stream in a run is keyed by a tuple of small integers rooted at
the master seed, so results never depend on execution order or parallelism.
"""

from __future__ import annotations

import numpy as np

# stream tags, kept distinct from client ids and round numbers by position
TAG_TASKS = 0
TAG_TRAIN_DATA = 1
TAG_TEST_DATA = 2
TAG_LOCAL_CLUSTER = 3
TAG_GLOBAL_CLUSTER = 4
TAG_TRAIN = 5
TAG_CLIENT_CLUSTER = 6


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a 64-bit seed."""
    if any(k < 0 for k in keys):
        raise ValueError(f"seed keys must be non-negative, got {keys}")
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))


def train_seed(master_seed: int, client_id: int, round_idx: int, slot: int = 0) -> int:
    """Seed for one local training call; ``slot`` separates star-mode assignments."""
    return derive_seed(master_seed, TAG_TRAIN, client_id, round_idx, slot)
