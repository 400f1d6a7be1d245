"""Seeded random streams.

Every random draw in the package goes through :func:`stream`, which builds a
PCG64 generator (64-bit state, 128-bit LCG with XSL-RR output) from a
``SeedSequence`` whose spawn key is the stream id. Distinct stream ids give
statistically independent generators for the same experiment seed, so
splitting, weight init, head re-init and epoch shuffling never share draws.
"""

import numpy as np

SPLIT = 1
INIT = 2
HEAD = 3
SHUFFLE = 4
SYNTH = 5


def stream(seed, *keys):
    """Return a PCG64 generator for ``seed`` on the stream named by ``keys``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))
