"""Reproducible random streams.

Every random draw in the package comes from a Philox4x64 counter-based
generator keyed by ``SeedSequence([seed, index, purpose_code])``. Normal
deviates use numpy's ziggurat sampler. A stream therefore depends only on
(seed, index, purpose), never on how many other streams were consumed before
it, which keeps replications and bootstrap resamples order-independent.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "data": 1,
    "folds": 2,
    "bootstrap": 3,
    "replication": 4,
    "population": 5,
}


def stream(seed: int, index: int = 0, purpose: str = "data") -> np.random.Generator:
    code = PURPOSES[purpose]
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index), code])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, index: int, purpose: str = "replication") -> int:
    """A 63-bit child seed for replication ``index`` of a run seeded with ``seed``."""
    code = PURPOSES[purpose]
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index), code])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
