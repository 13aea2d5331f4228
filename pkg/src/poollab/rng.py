"""Deterministic seed derivation and RNG streams.

Every random draw in the package comes from a numpy Generator whose seed is
derived with splitmix64 from a tuple of key parts (strings, ints, floats).
The derivation is pure arithmetic on the canonical text encoding of the
parts, so a given (experiment seed, run key) pair reproduces the identical
stream on any machine and in any process, independent of hashing
randomization or scheduling.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int):
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return state, z


def _canon(part) -> str:
    if isinstance(part, bool):
        return "b:%d" % part
    if isinstance(part, (int, np.integer)):
        return "i:%d" % int(part)
    if isinstance(part, (float, np.floating)):
        # repr is the shortest round-tripping decimal, stable across platforms
        return "f:%s" % repr(float(part))
    if isinstance(part, str):
        return "s:" + part
    raise TypeError(f"unhashable seed part of type {type(part).__name__}")


def hash64(*parts) -> int:
    """Collapse key parts into a uint64 via splitmix64 absorption.

    Used both for harness cell seeds and for deriving per-purpose substreams
    (model init, data, dropout, evaluation) from a run seed.
    """
    state = 0x5CA1AB1E0DDBA11 & _MASK64
    data = "\x1f".join(_canon(p) for p in parts).encode("utf-8")
    # absorb in 8-byte little-endian chunks, zero padded
    for off in range(0, len(data), 8):
        chunk = int.from_bytes(data[off:off + 8], "little")
        state, _ = splitmix64(state ^ chunk)
    state, out = splitmix64(state ^ len(data))
    return out


def make_rng(*parts) -> np.random.Generator:
    """A fresh PCG64 Generator keyed by the given parts."""
    return np.random.default_rng(hash64(*parts))
