"""Counter-based random streams.

Every random scalar is a pure function of a tuple of integer keys, so any
subset of a computation reproduces exactly the draws it would get inside the
whole computation, regardless of evaluation order or thread count.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def _as_u64(value) -> np.ndarray:
    if isinstance(value, (int, np.integer)):
        return np.uint64(int(value) & _MASK)
    arr = np.asarray(value)
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    if arr.dtype.kind == "i":
        return arr.astype(np.int64).view(np.uint64)
    raise TypeError(f"hash keys must be integers, got {arr.dtype}")


def hash_keys(*keys) -> np.ndarray:
    """Hash a tuple of integer keys (scalars or broadcastable arrays) to uint64."""
    h = np.uint64(0x243F6A8885A308D3)
    for k in keys:
        h = _mix(np.bitwise_xor(h, _as_u64(k)))
    return _mix(h)


def uniform(*keys) -> np.ndarray:
    """Uniform draws in the open interval (0, 1)."""
    h = hash_keys(*keys)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def standard_normal(*keys) -> np.ndarray:
    """Standard normal draws via Box-Muller over two hashed uniforms."""
    u1 = uniform(*keys, 0)
    u2 = uniform(*keys, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
