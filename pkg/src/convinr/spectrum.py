"""Fourier spectrum analysis: magnitude maps and radial energy profiles.

The headline number is hf_ratio, the fraction of spectral energy above a
normalized radial frequency cutoff. A model that only learned the smooth
parts of an image shows a much lower hf_ratio on its reconstruction than
the target image has.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import check_tensor


@dataclass
class SpectrumProfile:
    n_bins: int
    radial_energy: np.ndarray   # mean squared magnitude per bin
    bin_counts: np.ndarray
    hf_ratio: float


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def fft2d_magnitude(image: np.ndarray) -> np.ndarray:
    """Channel-averaged 2D FFT magnitude, zero frequency shifted to center.

    Spatial dimensions must be powers of two (callers center-crop first).
    """
    check_tensor(image, "image")
    H, W, C = image.shape
    if not (_is_pow2(H) and _is_pow2(W)):
        raise ValueError(f"spatial dims must be powers of two, got {H}x{W}")
    mag = np.zeros((H, W), dtype=np.float64)
    for c in range(C):
        mag += np.abs(np.fft.fft2(image[:, :, c].astype(np.float64)))
    mag /= C
    return np.fft.fftshift(mag)[:, :, None]


def radial_profile(spectrum: np.ndarray, n_bins: int = 32,
                   hf_cutoff: float = 0.25) -> SpectrumProfile:
    """Bin squared magnitudes by normalized radius r in [0, 1].

    r is the distance from the (shifted) zero-frequency bin divided by the
    largest such distance; hf_ratio is the energy at r > hf_cutoff over the
    total energy.
    """
    check_tensor(spectrum, "spectrum")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if not (0.0 <= hf_cutoff <= 1.0):
        raise ValueError("hf_cutoff must lie in [0, 1]")
    H, W, _ = spectrum.shape
    ci, cj = H // 2, W // 2
    ii, jj = np.meshgrid(np.arange(H) - ci, np.arange(W) - cj, indexing="ij")
    dist = np.sqrt(ii.astype(np.float64) ** 2 + jj.astype(np.float64) ** 2)
    rmax = float(dist.max())
    r = dist / rmax if rmax > 0 else dist
    power = spectrum[:, :, 0].astype(np.float64) ** 2

    bins = np.minimum((r * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(bins.ravel(), minlength=n_bins).astype(np.int64)
    sums = np.bincount(bins.ravel(), weights=power.ravel(), minlength=n_bins)
    energy = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)

    total = float(power.sum())
    high = float(power[r > hf_cutoff].sum())
    hf = high / total if total > 0 else 0.0
    return SpectrumProfile(n_bins, energy, counts, hf)


def image_spectrum_profile(image: np.ndarray, n_bins: int = 32,
                           hf_cutoff: float = 0.25) -> SpectrumProfile:
    """Radial profile of an image with the per-channel mean removed first.

    Brightness (the DC bin) would otherwise dominate the energy total and
    mask how much structural high-frequency content was learned.
    """
    centered = image - image.mean(axis=(0, 1))
    return radial_profile(fft2d_magnitude(centered), n_bins, hf_cutoff)
