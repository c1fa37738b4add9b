"""Named, independently seeded random streams.

Every (purpose, date index) pair gets its own generator derived from the
master seed, so design simulation, sequential augmentation and
out-of-sample valuation can be reproduced in isolation.
"""

import numpy as np

PURPOSES = {
    "design": 1,
    "payoff": 2,
    "candidates": 3,
    "augment": 4,
    "mle": 5,
    "oos": 6,
    "global": 7,
    "pilot": 8,
}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(PURPOSES[purpose], int(index)))
    return np.random.default_rng(ss)
