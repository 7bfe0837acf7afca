"""
Named random sub-streams derived from one master seed
"""

import numpy as np

STREAMS = ("data", "noise", "env", "init", "eval")


def stream_rng(seed: int, name: str, *extra: int) -> np.random.Generator:
    """
    Generator for one named stream.

    Args:
        seed: Master seed
        name: One of STREAMS
        extra: Further integers (episode index, worker id, ...) mixed into the stream

    Returns:
        numpy Generator; the same arguments always give the same draws
    """
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    return np.random.default_rng(np.random.SeedSequence([seed, STREAMS.index(name), *extra]))
