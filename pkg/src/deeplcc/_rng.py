"""Named random sub-streams derived from one 64-bit seed."""

import numpy as np

STREAMS = {"plant": 0, "collect": 1}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))
