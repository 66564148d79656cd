"""
Named random streams.

All randomness derives from one master seed. Each consumer asks for a stream
by name, so adding a consumer never shifts the draws of another.
"""

import zlib
from typing import Union

import numpy as np

StreamName = Union[str, int]


def stream_key(*names: StreamName) -> tuple:
    """Stable integer spawn key for a stream path."""
    return tuple(zlib.crc32(str(name).encode("utf-8")) for name in names)


def stream(seed: int, *names: StreamName) -> np.random.Generator:
    """
    Derive the generator for a named stream.

    Args:
        seed: Master seed of the run.
        *names: Stream path, e.g. ("theory", "market", 360, 7).

    Returns:
        Independent numpy Generator for that path.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=stream_key(*names))
    return np.random.default_rng(sequence)


def stream_seed(seed: int, *names: StreamName) -> int:
    """Derive a 32-bit integer seed for libraries that take plain ints."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=stream_key(*names))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])
