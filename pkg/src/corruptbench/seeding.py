"""Seed derivation and the random source used by every stochastic kernel.

The generator is numpy's Philox4x64-10, a counter-based generator keyed by a
single 64-bit value. Outputs are reproducible bit-for-bit for a given numpy
version; no guarantee is made across languages.
"""
import numpy as np

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & MASK64
    return h


def seed_from_parts(*parts) -> int:
    """Hash ``parts`` joined with ``|`` into a 64-bit seed."""
    return fnv1a_64("|".join(str(p) for p in parts).encode("utf-8"))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))
