"""Deterministic seed derivation.

Every random draw in the toolkit flows from one root seed through named
derivations, so parallel and serial runs produce identical output.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One round of the splitmix64 mixing function."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(root: int, label: str, *indices: int) -> int:
    """Derive a 64-bit child seed from a root seed, component label and indices.

    The label is hashed so that unrelated components sharing a root seed
    never see correlated streams; indices separate parallel jobs within a
    component.
    """
    tag = int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")
    seed = splitmix64((root & _MASK64) ^ tag)
    for idx in indices:
        seed = splitmix64(seed ^ (int(idx) & _MASK64))
    return seed


def rng_for(root: int, label: str, *indices: int) -> np.random.Generator:
    """A numpy generator seeded via :func:`derive_seed`."""
    return np.random.Generator(np.random.PCG64(derive_seed(root, label, *indices)))
