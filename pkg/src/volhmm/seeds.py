"""Deterministic seed derivation.

All randomness in experiments and CLI commands flows from one root seed. Child
seeds are derived by hashing "root|part|part|..." with SHA-256 and taking the
first 8 bytes, so results are reproducible across runs, platforms, and worker
counts. Parts are purpose tags and trial indices, e.g.
derive_seed(seed, "llr-data", trial).
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *parts) -> int:
    """64-bit child seed for (root, *parts); stable across processes."""
    key = "|".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")
