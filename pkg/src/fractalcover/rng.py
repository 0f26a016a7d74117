"""Counter-based random streams.

Every random number used by the sampler is a pure function of a key (built
from the seed, replicate, band, atom and cell) and a small integer counter.
This lets any cell of the infinite process be generated on demand, in any
order, with bit-identical results.

The mixing function is the SplitMix64 finalizer, applied elementwise to
uint64 arrays.  numpy's own bit generators are sequential per stream, so
they cannot be evaluated for millions of independent keys at once.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z):
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _as_u64(v):
    v = np.asarray(v)
    if v.dtype == np.uint64:
        return v
    # negative integers wrap two's-complement, which is what we want
    return v.astype(np.int64).astype(np.uint64)


def fold(key, value):
    """Absorb an integer (or integer array) into a key.  Broadcasts."""
    key = np.asarray(key, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(key ^ (mix64(_as_u64(value)) + GOLDEN))


def make_key(*parts):
    """Key from a sequence of integers, e.g. (seed, replicate, band, atom)."""
    key = np.uint64(0x243F6A8885A308D3)
    for p in parts:
        key = fold(key, np.uint64(int(p) % (1 << 64)))
    return np.asarray(key, dtype=np.uint64)


def bits(key, counter):
    """Raw 64-bit outputs for (key, counter) pairs."""
    key = np.asarray(key, dtype=np.uint64)
    c = _as_u64(counter)
    with np.errstate(over="ignore"):
        return mix64(key + GOLDEN * (c + np.uint64(1)))


def uniform(key, counter):
    """Uniform doubles in [0, 1) with 53 random bits."""
    return (bits(key, counter) >> np.uint64(11)).astype(np.float64) * _INV53
