"""Named, seed-derived random streams.

Every stochastic operation in the pipeline draws from a generator obtained via
``stream(seed, name)``.  Different names yield statistically independent
streams from the same sample seed, and no code touches numpy's global RNG, so
a sample is a pure function of its seed.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator for the (seed, name) pair; stable across runs."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK64, key]))


def substream(rng_seed: int, name: str, index: int) -> np.random.Generator:
    """Indexed variant of :func:`stream` for per-retry / per-item streams."""
    return stream(rng_seed, f"{name}#{index}")
