"""Deterministic child-seed derivation.

Child generators are derived from a root seed plus a stable string tag, so
work split across threads or re-ordered loops reproduces exactly. Never use
the built-in hash() here: it is salted per process.
"""

from __future__ import annotations

import hashlib
import random


def child_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}|{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def child_rng(seed: int, tag: str) -> random.Random:
    return random.Random(child_seed(seed, tag))
