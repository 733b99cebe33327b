"""Named random substreams derived from one master seed."""

import zlib

import numpy as np


def stream_seed(master_seed: int, name: str) -> int:
    """Stable 63-bit seed for substream ``name``; independent of call order."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def substream(master_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master_seed, name))
