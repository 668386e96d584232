"""Stable seed derivation. Python's ``hash`` is salted per process, so use sha256."""

import hashlib


def derive_seed(*parts) -> int:
    """64-bit seed from any sequence of ints/strings, stable across runs and platforms."""
    text = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")
