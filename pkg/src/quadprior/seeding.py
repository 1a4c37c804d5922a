"""Deterministic seed derivation.

One master seed fans out to per-stage and per-item seeds through a stable
SHA-256 hash, so any stage (or any single item) can be rerun in isolation
and reproduce byte-identical output. The scheme is part of the on-disk
contract: seed = first 8 bytes (big-endian, top bit cleared) of
sha256("quadprior:1:<master>/<label>/<label>/...").
"""

from __future__ import annotations

import hashlib

_PREFIX = "quadprior:1:"


def derive_seed(master_seed: int, *labels: int | str) -> int:
    """Derive a 63-bit seed from a master seed and a label path."""
    key = _PREFIX + str(int(master_seed)) + "".join(f"/{l}" for l in labels)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF
