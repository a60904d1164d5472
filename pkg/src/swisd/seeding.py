"""Deterministic derivation of named random substreams from a single root seed.

Every source of randomness in the pipeline (splits, weight init, augmentation,
shuffling, subsampling) draws from its own substream so that results do not
depend on scheduling or iteration order.
"""

from __future__ import annotations

import hashlib


def derive_seed(root_seed: int, *names: object) -> int:
    """Derive a 63-bit seed for the substream identified by ``names``.

    The mapping is a stable hash of the root seed and the substream path, so
    the same (root, path) always yields the same seed, independent of call
    order or platform.
    """
    digest = hashlib.sha256()
    digest.update(str(int(root_seed)).encode("utf-8"))
    for name in names:
        digest.update(b"/")
        digest.update(str(name).encode("utf-8"))
    return int.from_bytes(digest.digest()[:8], "big") >> 1
