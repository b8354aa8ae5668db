"""Named random sub-streams derived from one master seed."""
from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, stream: str) -> int:
    digest = hashlib.sha256(f"{seed}:{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int, stream: str) -> random.Random:
    return random.Random(derive_seed(seed, stream))
