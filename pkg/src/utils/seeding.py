"""Deterministic seed derivation so parallel sweeps never depend on scheduling"""
import hashlib
import random

import numpy as np

MASK_64 = (1 << 64) - 1


def stable_hash(*parts):
    """64-bit hash of the repr of the parts, stable across processes and runs"""
    digest = hashlib.blake2b(repr(parts).encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'big')


def derive_seed(base_seed, *parts):
    """Per-tile seed: base seed XOR a stable hash of the tile key"""
    return (int(base_seed) ^ stable_hash(*parts)) & MASK_64


def numpy_rng(seed):
    return np.random.default_rng(int(seed) & MASK_64)


def python_rng(seed):
    return random.Random(int(seed) & MASK_64)


def hash_choice(seed, key, count):
    """Pick an index in [0, count) from a keyed hash; the ideal per-switch ECMP hash"""
    if count <= 0:
        raise ValueError('count must be positive')
    return stable_hash(seed, key) % count
