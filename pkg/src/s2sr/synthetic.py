"""Synthetic multi-resolution scenes with spectrally correlated texture.

Every band is a mix of shared latent fields (smooth noise at several
scales plus piecewise-constant parcels with sharp borders), so the
high-resolution A bands carry the detail the coarse bands lost.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .resample import degrade
from .scene import BANDS_A, BANDS_B, BANDS_C, BandImage, MultiResScene


def _latent_fields(size: int, rng: np.random.Generator, n_parcels: int) -> np.ndarray:
    fields = []
    for sigma in (1.0, 3.0, 8.0):
        f = gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
        fields.append(f / f.std())
    seeds = rng.uniform(0, size, size=(n_parcels, 2))
    yy, xx = np.mgrid[0:size, 0:size]
    _, label = cKDTree(seeds).query(np.stack([yy.ravel(), xx.ravel()], axis=1))
    for _ in range(2):
        values = rng.standard_normal(n_parcels)
        fields.append(values[label].reshape(size, size))
    return np.stack(fields, axis=-1)


def make_truth_bands(size: int = 512, seed: int = 0, n_parcels: int = 400):
    """All twelve bands at the base resolution, keyed by band id (float64)."""
    rng = np.random.default_rng(seed)
    latent = _latent_fields(size, rng, n_parcels)
    bands = {}
    for bid in BANDS_A + BANDS_B + BANDS_C:
        mix = rng.uniform(-1.0, 1.0, size=latent.shape[-1]) * np.array([150, 250, 300, 450, 350])
        offset = rng.uniform(1500.0, 3500.0)
        bands[bid] = offset + latent @ mix
    return bands


def make_scene(size: int = 512, seed: int = 0, with_c: bool = True, sigma_2x: float = 0.5, sigma_6x: float = 1 / 6):
    """Return ``(scene, truth)``: a 10/20(/60) m scene and the 10 m truth for every band."""
    ratio = 6 if with_c else 2
    if size % ratio:
        raise ValueError(f"size {size} must be divisible by {ratio}")
    truth = make_truth_bands(size, seed)
    full = {b: BandImage(b, 10, np.clip(v, 1.0, None)) for b, v in truth.items()}
    set_a = tuple(full[b] for b in BANDS_A)
    set_b = tuple(degrade(full[b], 2, sigma_2x) for b in BANDS_B)
    set_c = tuple(degrade(full[b], 6, sigma_6x) for b in BANDS_C) if with_c else None
    return MultiResScene(set_a, set_b, set_c, base_gsd=10), full
