"""Deterministic seed fan-out.

A single master seed expands into per-stage, per-split seeds by hashing
(seed, stage, split), so adding a stage or reordering the work pool never
shifts another stage's randomness.
"""
from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, stage: str, split_index: int = 0) -> int:
    """Stable 63-bit seed derived from (master_seed, stage, split_index)."""
    key = f"{master_seed}:{stage}:{split_index}".encode()
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "big") >> 1
