"""Counter-based hashing for random field evaluation.

Every random quantity in an environment is a pure function of
(seed, slab, cell, channel).  We chain a 64-bit avalanche mix over those
words, so any cell of any slab can be evaluated at random access, in any
order, on any number of workers, with bit-identical results.
"""
from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / float(1 << 53)

__all__ = ["mix64", "counter_hash", "unit_uniform", "derived_seed"]


def mix64(h):
    """Finalizing avalanche permutation of uint64 words (array or scalar)."""
    h = np.asarray(h, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = (h ^ (h >> _S30)) * _M1
        h = (h ^ (h >> _S27)) * _M2
    return h ^ (h >> _S31)


def _word(w) -> np.ndarray:
    # Negative ints (cell indices) wrap mod 2**64, which is fine: the map
    # int64 -> uint64 is injective.
    a = np.asarray(w)
    if a.dtype.kind in "iu":
        return a.astype(np.uint64)
    raise TypeError(f"hash words must be integers, got {a.dtype}")


def counter_hash(*words) -> np.ndarray:
    """Fold integer words (seed, slab, cell..., channel) into one hash.

    Words broadcast against each other like any numpy op.
    """
    h = _GOLDEN
    with np.errstate(over="ignore"):
        for w in words:
            h = mix64((h + _GOLDEN) ^ _word(w))
    return h


def unit_uniform(h) -> np.ndarray:
    """Map hashes to uniforms in [0, 1) using the top 53 bits."""
    return (np.asarray(h, dtype=np.uint64) >> _S11).astype(np.float64) * _INV53


def derived_seed(master_seed: int, replica: int) -> int:
    """Seed for an ensemble replica: jumps to a disjoint counter block."""
    return int(counter_hash(np.uint64(master_seed), np.uint64(replica), np.uint64(0xEC5)))
