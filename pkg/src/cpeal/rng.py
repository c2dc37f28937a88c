"""Deterministic random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
backed by Philox (a counter-based generator), keyed by a tuple of
non-negative integers hashed through ``numpy.random.SeedSequence``.
There is no module-level generator state.

Stream tags keep draws for different purposes independent even when
they share a run seed.
"""

import numpy as np

HEAD_INIT = 1
SHUFFLE = 2
SELECT = 3
LORA_BASE = 4
SYNTH = 5


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into one 64-bit seed."""
    if any(int(k) < 0 for k in keys):
        raise ValueError(f"seed keys must be non-negative, got {keys}")
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def make_rng(*keys: int) -> np.random.Generator:
    """Return an independent Philox generator for the given key tuple."""
    return np.random.Generator(np.random.Philox(derive_seed(*keys)))
