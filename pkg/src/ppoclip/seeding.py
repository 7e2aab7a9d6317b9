"""Seed derivation.

A single master seed fans out to every random stream of a run through a
splitmix64 mixer keyed by a label path, e.g. ``derive_seed(7, "env", 3)``.
The derived value depends only on ``(master, labels)`` so a stream is the
same no matter how many other streams exist or in which order they are made.
"""
import zlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 output step for a 64-bit integer state."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _label_word(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK
    return zlib.crc32(str(label).encode("utf-8")) | (1 << 40)


def derive_seed(master, *labels):
    """Mix ``master`` with each label in turn and return a 64-bit seed."""
    state = splitmix64(int(master) & _MASK)
    for label in labels:
        state = splitmix64(state ^ _label_word(label))
    return state


def make_rng(master, *labels):
    return np.random.Generator(np.random.PCG64(derive_seed(master, *labels)))
