"""Counter-based random streams.

Every random draw in the package is a pure function of
``(master_seed, purpose, entity_id, draw)``, evaluated with the
Philox4x32-10 block cipher. No generator state is carried between units, so
results do not depend on processing order, chunking or worker count.
"""
from __future__ import annotations

import zlib

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 applied elementwise.

    ``counter`` is a sequence of four uint32-compatible arrays (broadcastable),
    ``key`` a pair of ints. Returns four ``uint32`` arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT) ^ c1 ^ np.uint64(k0),
            p1 & _MASK,
            (p0 >> _SHIFT) ^ c3 ^ np.uint64(k1),
            p0 & _MASK,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


def purpose_tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8")) & 0xFFFFFFFF


def stream_words(master_seed: int, purpose: str, ids, draw: int = 0):
    ids = np.asarray(ids, dtype=np.int64).astype(np.uint64)
    seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
    key = (seed & 0xFFFFFFFF, seed >> 32)
    counter = (ids & _MASK, ids >> _SHIFT, purpose_tag(purpose), int(draw) & 0xFFFFFFFF)
    return philox4x32(counter, key)


def uniforms(master_seed: int, purpose: str, ids, draw: int = 0) -> np.ndarray:
    """One U[0, 1) double per id, with 53 random bits."""
    w0, w1, _, _ = stream_words(master_seed, purpose, ids, draw)
    hi = w0.astype(np.uint64) >> np.uint64(5)   # 27 bits
    lo = w1.astype(np.uint64) >> np.uint64(6)   # 26 bits
    return (hi.astype(np.float64) * 67108864.0 + lo.astype(np.float64)) / 9007199254740992.0
