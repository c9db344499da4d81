"""Deterministic seed derivation.

Every random decision in the system flows from one experiment seed. Derived
seeds are computed with a keyed hash rather than Python's ``hash()`` so they
are stable across processes, platforms, and interpreter versions.
"""

from __future__ import annotations

import hashlib

MAX_SEED = 2**64 - 1


def derive_seed(*parts: int | str) -> int:
    """Collapse ``parts`` into a 64-bit seed, stable across runs."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")
