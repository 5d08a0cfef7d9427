"""Counter-based (stateless) pseudo-randomness.

Every random quantity in this package is a pure function of a 64-bit root
seed plus a handful of integer keys (stage label, site coordinates, replica
index, step index).  There is no generator state to advance, so values are
reproducible under any traversal order, any worker partition, and any
window/margin enlargement: the value attached to a site never changes when
the surrounding box grows.

The mixer is splitmix64, applied as a short absorb-permute chain over the
key sequence.  It is not cryptographic; it is a well-tested 64-bit finalizer
with full avalanche, which is all a desk-scale Monte Carlo needs.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """One splitmix64 round on a 64-bit integer."""
    x = (x + _GAMMA) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def mix(*keys: int) -> int:
    """Fold a key sequence into one 64-bit hash (order-sensitive)."""
    h = 0x8C5FDF2A05C73D0A
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK))
    return h


def stream(label: str, *keys: int) -> int:
    """Derive a named substream seed: hash the label bytes, then the keys."""
    h = mix(len(label))
    for b in label.encode():
        h = splitmix64(h ^ b)
    return mix(h, *keys)


def uniform(seed: int, *keys: int) -> float:
    """One uniform in the open interval (0, 1), keyed by (seed, keys)."""
    h = mix(seed, *keys)
    return ((h >> 11) + 0.5) * 2.0 ** -53


# ---------------------------------------------------------------------------
# vectorized variants (uint64 arrays, wraparound arithmetic)
# ---------------------------------------------------------------------------

def _sm64_vec(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(_GAMMA)
        z = x
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))


def mix_vec(seed: int, key_arrays: list[np.ndarray]) -> np.ndarray:
    """Vectorized `mix(seed, k1[i], k2[i], ...)` over aligned key arrays."""
    h = np.full(key_arrays[0].shape, mix(seed), dtype=np.uint64)
    for k in key_arrays:
        h = _sm64_vec(h ^ k.astype(np.int64).view(np.uint64))
    return h


def uniform_vec(seed: int, key_arrays: list[np.ndarray]) -> np.ndarray:
    """Vectorized open-interval uniforms keyed by (seed, keys[i])."""
    h = mix_vec(seed, key_arrays)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def u64_vec(seed: int, key_arrays: list[np.ndarray]) -> np.ndarray:
    """Vectorized raw 64-bit words keyed by (seed, keys[i])."""
    return mix_vec(seed, key_arrays)
