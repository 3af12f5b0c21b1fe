"""Counter-based random streams (splitmix64).

Every random quantity in a simulation is drawn from a stream identified
by (master seed, domain, index).  Streams are stateless hashes of their
key and a draw counter, so any draw can be reproduced from coordinates
alone: no global state, no draw-order coupling between agents, and the
same values fall out of the scalar, numpy and numba implementations.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
MIX_A = 0xBF58476D1CE4E5B9
MIX_B = 0x94D049BB133111EB

# Domain tags for deriving sub-streams from the master seed.
DOMAIN_MARKET = 1
DOMAIN_GENOME_INIT = 2
DOMAIN_AGENT = 3
DOMAIN_ASSET_SIGNAL = 4
DOMAIN_EVOLUTION = 5
DOMAIN_WEIGHTS = 6

_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """Scramble a 64-bit integer (splitmix64 finalizer)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * MIX_B) & MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, domain: int, index: int = 0) -> int:
    """Derive a stream key from (master seed, domain tag, index)."""
    z = mix64((seed + GAMMA) & MASK64)
    z = mix64(z ^ ((domain * MIX_A) & MASK64))
    return mix64(z ^ ((index * MIX_B) & MASK64))


def stream_u64(key: int, counter: int) -> int:
    return mix64((key + ((counter + 1) * GAMMA)) & MASK64)


def stream_uniform(key: int, counter: int) -> float:
    """Uniform in [0, 1) for draw `counter` of stream `key`."""
    return (stream_u64(key, counter) >> 11) * _INV_2_53


def stream_uniform_array(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Vectorized stream_uniform over uint64 arrays."""
    z = (keys + (counters + np.uint64(1)) * np.uint64(GAMMA))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_B)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


class RngStream:
    """Sequential view over a counter-based stream.

    Owned by exactly one caller at a time; each draw advances the
    counter, so replaying a stream from the same (key, counter) start
    reproduces the identical sequence.
    """

    __slots__ = ("key", "counter")

    def __init__(self, key: int, counter: int = 0) -> None:
        self.key = key & MASK64
        self.counter = counter

    @classmethod
    def from_seed(cls, seed: int, domain: int, index: int = 0) -> "RngStream":
        return cls(derive_key(seed, domain, index))

    def uniform(self) -> float:
        u = stream_uniform(self.key, self.counter)
        self.counter += 1
        return u

    def normal(self) -> float:
        """Standard normal via Box-Muller (consumes two draws)."""
        u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        return r * math.cos(2.0 * math.pi * u2)
