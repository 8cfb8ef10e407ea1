"""Counter-based random streams.

All randomness in the package flows through Philox keyed by a user seed
plus an integer spawn key, so any replicate's stream can be reconstructed
independently of execution order or worker count.
"""

import numpy as np

__all__ = ["stream", "derive_seed"]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the Generator for stream ``key`` under master ``seed``.

    The same (seed, key) pair always yields the same stream, regardless
    of how many other streams were drawn before it.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse (seed, key) into a single 64-bit child seed."""
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return int(ss.generate_state(1, np.uint64)[0])
