"""Deterministic procedural test images.

Handy when no photograph is around: multi-octave value noise gives the
roughly 1/f spectrum of natural scenes, and a few hard-edged shapes add the
broadband content that separates models which learn high frequencies from
models which do not.
"""
from __future__ import annotations

import numpy as np

from .rng import seeded_rng


def _bilinear_upsample(lattice: np.ndarray, height: int, width: int) -> np.ndarray:
    cells_i, cells_j = lattice.shape[0] - 1, lattice.shape[1] - 1
    ti = (np.arange(height) + 0.5) / height * cells_i
    tj = (np.arange(width) + 0.5) / width * cells_j
    i0 = np.minimum(ti.astype(np.int64), cells_i - 1)
    j0 = np.minimum(tj.astype(np.int64), cells_j - 1)
    fi = (ti - i0)[:, None, None]
    fj = (tj - j0)[None, :, None]
    a = lattice[i0][:, j0]
    b = lattice[i0][:, j0 + 1]
    c = lattice[i0 + 1][:, j0]
    d = lattice[i0 + 1][:, j0 + 1]
    return (a * (1 - fi) * (1 - fj) + b * (1 - fi) * fj
            + c * fi * (1 - fj) + d * fi * fj)


def natural_test_image(height: int = 256, width: int = 256, seed: int = 0,
                       channels: int = 3) -> np.ndarray:
    """Float32 image in [0, 1] with natural-looking multi-scale structure."""
    rng = seeded_rng(seed, stream=101)
    img = np.zeros((height, width, channels), dtype=np.float64)
    cell = 4
    amp = 1.0
    while cell <= min(height, width) // 2:
        lattice = rng.uniform(-1.0, 1.0, size=(cell + 1, cell + 1, channels))
        img += amp * _bilinear_upsample(lattice, height, width)
        cell *= 2
        amp *= 0.55

    yy, xx = np.meshgrid(np.linspace(-1, 1, height), np.linspace(-1, 1, width),
                         indexing="ij")
    for _ in range(4):
        cy = rng.uniform(-0.6, 0.6)
        cx = rng.uniform(-0.6, 0.6)
        radius = rng.uniform(0.08, 0.3)
        color = rng.uniform(-0.8, 0.8, size=channels)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < radius ** 2
        img[mask] = img[mask] * 0.35 + color

    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
    return (0.03 + 0.94 * img).astype(np.float32)
