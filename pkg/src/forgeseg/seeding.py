"""Stable seed derivation.

One global seed fans out to per-stage / per-sample seeds through a hash of
(seed, name), so adding a stage or sample never shifts another one's stream.
"""

import hashlib
import json


def derive_seed(seed: int, name: str) -> int:
    """Derive a 63-bit child seed from a parent seed and a label."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def stable_hash(obj) -> str:
    """Hex digest of a JSON-serializable object, stable across runs."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
