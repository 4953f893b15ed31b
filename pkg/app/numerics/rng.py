from typing import Sequence, Union

import numpy as np

StreamId = Union[int, Sequence[int]]


def rng_stream(seed: int, stream_id: StreamId = 0) -> np.random.Generator:
    """Independent, reproducible generator for (seed, stream_id).

    Streams are children of one SeedSequence keyed by ``stream_id``; a tuple
    id such as (replicate, purpose, draw) addresses nested streams.
    """
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a non-negative integer")
    key = tuple(int(s) for s in stream_id) if isinstance(stream_id, (tuple, list)) else (int(stream_id),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=key)))
