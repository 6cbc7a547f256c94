"""Counter-based seed derivation.

Every random stream in the package is derived from one master seed and a path of
small integers or strings, so adding a stream never shifts another.
"""
import hashlib

import numpy as np


def _path_key(path):
    key = []
    for item in path:
        if isinstance(item, (int, np.integer)):
            key.append(int(item))
        else:
            digest = hashlib.sha256(str(item).encode("utf-8")).digest()
            key.append(int.from_bytes(digest[:4], "little"))
    return tuple(key)


def seed_sequence(master, *path):
    return np.random.SeedSequence(int(master), spawn_key=_path_key(path))


def derive_rng(master, *path):
    return np.random.Generator(np.random.Philox(seed_sequence(master, *path)))


def derive_seed(master, *path):
    """32-bit integer seed for APIs that take ``random_state`` ints."""
    return int(seed_sequence(master, *path).generate_state(1, dtype=np.uint32)[0])
