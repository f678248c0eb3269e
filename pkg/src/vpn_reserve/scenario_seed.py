"""Master-seed splitting.

Every consumer derives its stream as the first 8 bytes of
sha256("{master}|{label}"), so adding one solver never perturbs another's
stream and identical (seed, label) pairs always reproduce identical runs.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{master}|{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
