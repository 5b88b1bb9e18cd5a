"""Degradation model (Gaussian blur + block averaging) and interpolation kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import DimensionMismatch, DomainError, InvariantViolation
from .scene import BandImage, MultiResScene


@dataclass(frozen=True)
class DegradationSpec:
    """Scale ratio and blur width used to synthesize a training pair.

    ``sigma`` is in input (high-resolution) pixels and defaults to ``1/scale``.
    """

    scale: int
    sigma: Optional[float] = None
    per_band_sigma: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if int(self.scale) != self.scale or self.scale < 2:
            raise InvariantViolation(f"scale must be an integer >= 2, got {self.scale}")
        if self.sigma is not None and not self.sigma > 0:
            raise InvariantViolation(f"sigma must be positive, got {self.sigma}")
        if self.per_band_sigma:
            bad = {b: s for b, s in self.per_band_sigma.items() if not s > 0}
            if bad:
                raise InvariantViolation(f"non-positive per-band sigma: {bad}")

    @property
    def default_sigma(self) -> float:
        return self.sigma if self.sigma is not None else 1.0 / self.scale

    def sigma_for(self, band_id: str) -> float:
        if self.per_band_sigma is not None:
            if band_id not in self.per_band_sigma:
                raise InvariantViolation(f"per_band_sigma has no entry for {band_id}")
            return float(self.per_band_sigma[band_id])
        return self.default_sigma


def mtf_to_sigma(mtf: float) -> float:
    """Gaussian PSF width (pixels) whose transfer function at Nyquist equals ``mtf``."""
    if not 0.0 < mtf < 1.0:
        raise DomainError(f"mtf must lie in (0, 1), got {mtf}")
    return math.sqrt(-2.0 * math.log(mtf) / math.pi**2)


def gaussian_kernel(sigma: float) -> np.ndarray:
    # radius ceil(4 sigma), renormalized to unit sum
    if not sigma > 0:
        raise InvariantViolation(f"sigma must be positive, got {sigma}")
    radius = max(1, math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (r, r)
    xp = np.pad(x, pad, mode="reflect") if x.shape[axis] > 1 else np.pad(x, pad, mode="edge")
    n = x.shape[axis]
    # taps act on differences from the centre sample, so constants pass through bit-exactly
    out = np.array(x, dtype=np.float64)
    for t, w in enumerate(kernel):
        if t != r:
            out += w * (np.take(xp, np.arange(t, t + n), axis=axis) - x)
    return out


def gaussian_blur_array(x: np.ndarray, sigma: float, axes=(0, 1)) -> np.ndarray:
    """Separable Gaussian blur with reflect borders, computed in float64."""
    k = gaussian_kernel(sigma)
    out = np.asarray(x, dtype=np.float64)
    for ax in axes:
        out = _blur_axis(out, k, ax)
    return out


def gaussian_blur(image: BandImage, sigma: float) -> BandImage:
    return image.with_data(gaussian_blur_array(image.data, sigma).astype(np.float32))


def area_downsample_array(x: np.ndarray, s: int, axes=(0, 1)) -> np.ndarray:
    ay, ax = axes
    h, w = x.shape[ay], x.shape[ax]
    if h % s or w % s:
        raise DimensionMismatch(f"{w}x{h} raster is not divisible by {s}")
    x = np.moveaxis(np.asarray(x, dtype=np.float64), (ay, ax), (0, 1))
    blocks = x.reshape((h // s, s, w // s, s) + x.shape[2:])
    out = blocks.mean(axis=(1, 3))
    return np.moveaxis(out, (0, 1), (ay, ax))


def area_downsample(image: BandImage, s: int) -> BandImage:
    data = area_downsample_array(image.data, s).astype(np.float32)
    return BandImage(image.band_id, image.gsd * s, data)


def _keys_weight(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    near = ((a + 2) * t - (a + 3)) * t * t + 1
    far = ((a * t - 5 * a) * t + 8 * a) * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def interp_taps(n: int, s: int, kind: str = "bilinear"):
    """Source indices ``(n*s, taps)`` and weights for 1-D upsampling by ``s``.

    Indices past the border are clamped to the edge sample.
    """
    # center-aligned source coordinate u = (2i + 1 - s) / (2s), kept in integers so that
    # weights depend only on i mod s (tiles reproduce whole-image weights bit for bit)
    num = 2 * np.arange(n * s, dtype=np.int64) + 1 - s
    base = num // (2 * s)
    frac = (num - base * 2 * s) / (2.0 * s)
    if kind == "bilinear":
        offsets = np.array([0, 1])
        weights = np.stack([1.0 - frac, frac], axis=1)
    elif kind == "bicubic":
        offsets = np.array([-1, 0, 1, 2])
        weights = _keys_weight(frac[:, None] - offsets[None, :])
    else:
        raise ValueError(f"unknown interpolation kind {kind!r}")
    idx = np.clip(base[:, None] + offsets[None, :], 0, n - 1)
    return idx, weights


def _upsample_axis(x: np.ndarray, s: int, axis: int, kind: str) -> np.ndarray:
    idx, w = interp_taps(x.shape[axis], s, kind)
    shape = [1] * x.ndim
    shape[axis] = -1
    out = None
    for t in range(idx.shape[1]):
        term = np.take(x, idx[:, t], axis=axis) * w[:, t].reshape(shape)
        out = term if out is None else out + term
    return out


def _upsample_axis_transpose(g: np.ndarray, n: int, s: int, axis: int, kind: str) -> np.ndarray:
    idx, w = interp_taps(n, s, kind)
    shape = [1] * g.ndim
    shape[axis] = -1
    g = np.moveaxis(g, axis, 0)
    out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
    for t in range(idx.shape[1]):
        np.add.at(out, idx[:, t], g * w[:, t].reshape((-1,) + (1,) * (g.ndim - 1)))
    return np.moveaxis(out, 0, axis)


def upsample_array(x: np.ndarray, s: int, kind: str = "bilinear", axes=(0, 1)) -> np.ndarray:
    """Upsample the two spatial ``axes`` of ``x`` by ``s``; result keeps ``x``'s float dtype."""
    if s < 1:
        raise InvariantViolation(f"upsampling factor must be >= 1, got {s}")
    x = np.asarray(x)
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    out = x.astype(np.float64)
    for ax in axes:
        out = _upsample_axis(out, s, ax, kind)
    return out.astype(dtype)


def upsample_array_transpose(g: np.ndarray, shape_in, s: int, kind: str = "bilinear", axes=(0, 1)):
    """Adjoint of :func:`upsample_array`; maps output gradients back to the input grid."""
    out = np.asarray(g, dtype=np.float64)
    for ax in reversed(axes):
        out = _upsample_axis_transpose(out, shape_in[ax], s, ax, kind)
    return out.astype(g.dtype)


def bilinear_upsample(image: BandImage, s: int) -> BandImage:
    if s < 2:
        raise InvariantViolation(f"upsampling factor must be >= 2, got {s}")
    return BandImage(image.band_id, image.gsd // s, upsample_array(image.data, s, "bilinear"))


def bicubic_upsample(image: BandImage, s: int) -> BandImage:
    if s < 2:
        raise InvariantViolation(f"upsampling factor must be >= 2, got {s}")
    return BandImage(image.band_id, image.gsd // s, upsample_array(image.data, s, "bicubic"))


def degrade(image: BandImage, s: int, sigma: float) -> BandImage:
    """Blur at the input resolution, then average ``s x s`` blocks."""
    blurred = gaussian_blur_array(image.data, sigma)
    return BandImage(image.band_id, image.gsd * s, area_downsample_array(blurred, s).astype(np.float32))


def simulate_scene(scene: MultiResScene, spec: DegradationSpec):
    """Degrade every band of ``scene`` by ``spec.scale``.

    Returns ``(inputs, targets)``: the reduced-resolution scene and the
    original bands the network should recover from it (set B for a 2x
    ratio, set C for 6x).
    """
    s = spec.scale
    if s == 2:
        need, groups, targets = 4, ("a", "b"), list(scene.set_b)
    elif s == 6:
        if not scene.has_c:
            raise DimensionMismatch("a 6x simulation needs the C band set")
        need, groups, targets = 36, ("a", "b", "c"), list(scene.set_c)
    else:
        raise InvariantViolation(f"simulation scale must be 2 or 6, got {s}")
    if scene.width % need or scene.height % need:
        raise DimensionMismatch(
            f"scene {scene.width}x{scene.height} must be divisible by {need} for a {s}x simulation"
        )
    sets = {}
    for g in groups:
        images = getattr(scene, f"set_{g}")
        sets[g] = tuple(degrade(im, s, spec.sigma_for(im.band_id)) for im in images)
    degraded = MultiResScene(sets["a"], sets["b"], sets.get("c"), base_gsd=scene.base_gsd * s)
    return degraded, targets
