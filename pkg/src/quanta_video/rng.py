"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of ``(key, counter)``, so a pixel's noise depends
only on the seed, the frame index and the pixel's flat index. Nothing is
carried between calls, which keeps simulation results independent of the order
or the thread in which frames and pixels are evaluated.
"""

from __future__ import annotations

import hashlib

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

ROUNDS = 10


def _mulhilo(m: np.uint64, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    prod = x.astype(np.uint64) * m
    return (prod >> _SHIFT32).astype(np.uint32), (prod & _MASK32).astype(np.uint32)


def philox4x32(counter: np.ndarray, key: tuple[int, int], rounds: int = ROUNDS) -> np.ndarray:
    """Apply the Philox4x32 bijection to an array of 128-bit counters.

    Args:
        counter: uint32 array of shape ``(..., 4)``.
        key: two 32-bit key words.
        rounds: number of Philox rounds (10 is the standard, crush-resistant choice).

    Returns:
        uint32 array with the same shape as ``counter``.
    """
    ctr = np.asarray(counter, dtype=np.uint32)
    if ctr.shape[-1] != 4:
        raise ValueError("counter must have a trailing dimension of 4")
    c0, c1, c2, c3 = (ctr[..., i].copy() for i in range(4))
    k0 = np.uint32(key[0] & 0xFFFFFFFF)
    k1 = np.uint32(key[1] & 0xFFFFFFFF)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 = np.uint32((int(k0) + int(_W0)) & 0xFFFFFFFF)
                k1 = np.uint32((int(k1) + int(_W1)) & 0xFFFFFFFF)
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def derive_key(seed: int, stream: int) -> tuple[int, int]:
    """Mix a user seed and a stream id (e.g. frame index) into a Philox key."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    digest = hashlib.blake2b(
        seed.to_bytes(16, "little") + stream.to_bytes(16, "little"),
        digest_size=8,
        person=b"qvr-philox",
    ).digest()
    word = int.from_bytes(digest, "little")
    return word & 0xFFFFFFFF, word >> 32


def random_words(seed: int, stream: int, n: int) -> np.ndarray:
    """Four uint32 words for each of ``n`` consecutive element indices.

    Element ``i`` always receives the block for counter ``(i_lo, i_hi, 0, 0)``,
    regardless of ``n``.
    """
    idx = np.arange(n, dtype=np.uint64)
    ctr = np.zeros((n, 4), dtype=np.uint32)
    ctr[:, 0] = (idx & _MASK32).astype(np.uint32)
    ctr[:, 1] = (idx >> _SHIFT32).astype(np.uint32)
    return philox4x32(ctr, derive_key(seed, stream))


def words_to_unit(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """Two uint32 words to a 53-bit uniform strictly inside (0, 1)."""
    bits = (hi.astype(np.uint64) << np.uint64(21)) ^ (lo.astype(np.uint64) >> np.uint64(11))
    bits &= np.uint64((1 << 53) - 1)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def uniform_and_normal(seed: int, stream: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-element uniform in (0, 1) and standard normal, counter-addressed.

    The uniform uses words 0-1 of each Philox block; the normal is a Box-Muller
    draw from words 2-3.
    """
    w = random_words(seed, stream, n)
    u = words_to_unit(w[:, 0], w[:, 1])
    u1 = (w[:, 2].astype(np.float64) + 0.5) * 2.0**-32
    u2 = (w[:, 3].astype(np.float64) + 0.5) * 2.0**-32
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return u, z
