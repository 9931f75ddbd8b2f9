"""Deterministic pseudo-random streams based on SplitMix64.

The generator is counter-based: draw i of a stream seeded with s is a pure
function mix(s + (i+1)*GOLDEN), so the same seed reproduces the same stream
on every platform and the stream can be generated in vectorized blocks.
Quality is far beyond what weight initialization needs.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1
_INV_2_53 = 1.0 / float(1 << 53)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # wraparound is the point
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class SeededRng:
    """Stream of uniform f64 values in [0, 1).

    `stream` selects an independent substream for the same seed, so parallel
    runs can derive non-overlapping generators from (seed, run index).
    """

    def __init__(self, seed: int, stream: int = 0):
        base = _mix64(np.uint64(int(seed) & _U64_MASK))
        if stream:
            with np.errstate(over="ignore"):
                salt = np.uint64(int(stream) & _U64_MASK) * _GOLDEN
            base = _mix64(base ^ salt)
        self._base = base
        self._count = np.uint64(0)

    def _raw(self, n: int) -> np.ndarray:
        idx = self._count + np.arange(1, n + 1, dtype=np.uint64)
        self._count += np.uint64(n)
        with np.errstate(over="ignore"):
            return _mix64(self._base + idx * _GOLDEN)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        """Uniform draws in [low, high); scalar when size is None."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        out = low + (high - low) * u
        if size is None:
            return float(out[0])
        return out.reshape(size)


def seeded_rng(seed: int, stream: int = 0) -> SeededRng:
    return SeededRng(seed, stream)
