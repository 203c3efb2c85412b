"""Deterministic derivation of child seeds from a master seed (splitmix64)."""

from __future__ import annotations

import zlib

_MASK = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int | str) -> int:
    """Child seed for ``keys`` under ``master``; strings are folded by CRC32."""
    state = splitmix64(int(master) & _MASK)
    for key in keys:
        k = zlib.crc32(key.encode()) if isinstance(key, str) else int(key)
        state = splitmix64(state ^ (k & _MASK))
    # keep seeds JSON- and CSV-friendly
    return state >> 1
