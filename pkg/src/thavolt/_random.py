"""Seed splitting.

Every random stream is derived from a root seed plus a purpose tuple, so that
e.g. adding a head never changes the stream used by another one::

    rng = derive_rng(root, "gen", "inputs", "train")
"""
import hashlib

import numpy as np


def _purpose_key(purpose):
    text = "\x1f".join(str(p) for p in purpose).encode("utf-8")
    digest = hashlib.sha256(text).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def derive_seed_sequence(root, *purpose):
    return np.random.SeedSequence(int(root), spawn_key=_purpose_key(purpose))


def derive_rng(root, *purpose):
    """Independent ``Generator`` for ``(root, purpose...)``."""
    return np.random.default_rng(derive_seed_sequence(root, *purpose))


def derive_seed(root, *purpose):
    """A 63-bit integer seed for ``(root, purpose...)``."""
    return int(derive_seed_sequence(root, *purpose).generate_state(1, np.uint64)[0] >> 1)
