"""Deterministic random streams.

All sampling in this package flows through PCG32 generators that are derived,
not shared: every (seed, task, index) triple names its own independent stream,
so episode 731 of task "lines" can be regenerated without replaying episodes
0..730.  Derivation is pure integer hashing (FNV-1a for the task name,
SplitMix64 for mixing), so streams are reproducible across platforms and
numpy versions.
"""

from __future__ import annotations

import numpy as np

_M64 = (1 << 64) - 1
_M32 = (1 << 32) - 1

# -- integer hashing -------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _M64
    return h


def splitmix64(x: int) -> int:
    """One SplitMix64 output step; a strong 64-bit bijective mixer."""
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return (x ^ (x >> 31)) & _M64


class Pcg32:
    """Minimal PCG32 (XSH-RR variant, 64-bit state, 32-bit output)."""

    _MULT = 6364136223846793005

    def __init__(self, init_state: int, seq: int = 0):
        self.state = 0
        # stream selector must be odd
        self.inc = (((seq & _M64) << 1) | 1) & _M64
        self._step()
        self.state = (self.state + (init_state & _M64)) & _M64
        self._step()

    def _step(self) -> None:
        self.state = (self.state * self._MULT + self.inc) & _M64

    def next_u32(self) -> int:
        old = self.state
        self._step()
        xorshifted = (((old >> 18) ^ old) >> 27) & _M32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _M32

    # -- derived draws ----------------------------------------------------

    def random(self) -> float:
        """Uniform float in [0, 1) with 32 bits of resolution."""
        return self.next_u32() / 4294967296.0

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, n: int) -> int:
        """Uniform int in [0, n).  Multiply-shift bounding (documented,

        deterministic; bias < 2**-32 for the small n used here)."""
        if n <= 0:
            raise ValueError(f"randint needs n >= 1, got {n}")
        return (self.next_u32() * n) >> 32

    def randrange(self, lo: int, hi: int) -> int:
        """Uniform int in [lo, hi)."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        return lo + self.randint(hi - lo)

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        out = list(range(n))
        self.shuffle(out)
        return out

    def numpy_rng(self) -> np.random.Generator:
        """Bridge to numpy for bulk draws (weight init, dropout masks).

        Seeded from this stream's own output so the bridge is reproducible."""
        seed = (self.next_u32() << 32) | self.next_u32()
        return np.random.Generator(np.random.PCG64(seed))


# -- stream derivation -----------------------------------------------------

def stream_key(seed: int, task: str, index: int) -> int:
    """64-bit key naming the (seed, task, index) stream."""
    a = splitmix64((seed & _M64) ^ fnv1a64(task.encode("utf-8")))
    return splitmix64(a ^ (index & _M64))


def stream(seed: int, task: str, index: int) -> Pcg32:
    """Independent PCG32 stream for the given (seed, task, index) triple."""
    key = stream_key(seed, task, index)
    return Pcg32(key, splitmix64(key))
