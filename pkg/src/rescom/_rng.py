"""Named random sub-streams derived from one seed."""

import numpy as np

STREAMS = {
    "data": 0,
    "init": 1,
    "augment": 2,
    "simulate": 3,
    "warmup": 4,
    "test": 5,
    "shuffle": 6,
    "gradcheck": 7,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for subsystem ``name``; other streams are unaffected."""
    return np.random.default_rng([int(seed), STREAMS[name]])
