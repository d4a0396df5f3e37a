"""
Random Streams
Purpose: Seeded, counter-based random number generation for every stochastic stage
Functions:
- Philox generators keyed by the run seed and up to three stream words
- Independent sub-streams per stage, frame or human, so results do not depend
  on processing order
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Philox generator keyed by seed and stream

    Args:
        seed: Non-negative integer seed
        stream: Up to three integers addressing an independent sub-stream

    Raises:
        ValueError: negative seed or more than three stream words
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    if len(stream) > 3:
        raise ValueError("at most three stream words are supported")
    # counter word 0 stays free for the generator's own block count
    counter = [0] + [int(s) & _MASK64 for s in stream] + [0] * (3 - len(stream))
    return np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 128) - 1), counter=counter))
