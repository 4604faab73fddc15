"""Counter-based random streams.

Every stochastic choice in the package (dropout masks, patch masks, shuffles,
parameter init) draws from a Philox generator whose key is derived from the
caller's seed plus a stream id and whose counter encodes the step. Two calls
with the same (seed, stream, step) always see the same numbers, independent of
how many draws happened elsewhere.
"""
import zlib

import numpy as np

_U64 = (1 << 64) - 1


def _u64(value):
    if isinstance(value, str):
        return zlib.crc32(value.encode("utf-8"))
    return int(value) & _U64


def derive_seed(*parts):
    """Fold integers (or strings, via crc32) into one 63-bit seed, order sensitive."""
    ss = np.random.SeedSequence([_u64(p) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def stream(seed, stream_id=0, counter=0):
    """Return a Generator keyed by ``(seed, stream_id)`` positioned at ``counter``."""
    key = np.array([_u64(seed), _u64(stream_id)], dtype=np.uint64)
    ctr = np.array([0, 0, _u64(counter), 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=ctr))
