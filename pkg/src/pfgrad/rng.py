"""Counter-based random streams for reproducible parallel simulation.

Every stochastic routine in this package draws from a Philox generator whose
128-bit key encodes the stream id (master seed, replicate, step, purpose).
Philox is a keyed counter-mode generator, so distinct ids give independent
streams without any coordination between workers; a replicate can be run on
any worker, in any order, and produce identical draws.

Within one stream, draws are consumed in a fixed layout (e.g. one uniform per
particle, in particle order), so the position in the stream plays the role of
the per-particle coordinate of the stream id.
"""

import numpy as np

# Key layout: word0 = master seed (64 bits),
# word1 = replicate (32 bits) | step (24 bits) | purpose (8 bits).
_REPLICATE_BITS = 32
_STEP_BITS = 24
_PURPOSE_BITS = 8


def stream(master_seed, replicate=0, step=0, purpose=0):
    """Return a fresh ``numpy.random.Generator`` for the given stream id.

    The same id always yields the same stream; ids differing in any
    coordinate yield independent streams.
    """
    if not 0 <= replicate < (1 << _REPLICATE_BITS):
        raise ValueError(f"replicate id out of range: {replicate}")
    if not 0 <= step < (1 << _STEP_BITS):
        raise ValueError(f"step out of range: {step}")
    if not 0 <= purpose < (1 << _PURPOSE_BITS):
        raise ValueError(f"purpose out of range: {purpose}")
    word0 = np.uint64(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
    word1 = np.uint64(
        (replicate << (_STEP_BITS + _PURPOSE_BITS))
        | (step << _PURPOSE_BITS)
        | purpose
    )
    key = np.array([word0, word1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=0, key=key))
