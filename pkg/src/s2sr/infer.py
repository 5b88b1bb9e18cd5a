"""Full-scene super-resolution by overlapping tiles."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvariantViolation, MissingBand, ShapeMismatch, TileTooSmall, WeightsConfigMismatch
from .network import NetworkConfig, NetworkWeights, forward_from_x0
from .resample import upsample_array
from .scene import BANDS_A, BANDS_B, BANDS_C, BandImage, MultiResScene

log = logging.getLogger(__name__)

OUTPUT_ORDER = ("B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8a", "B9", "B11", "B12")


@dataclass(frozen=True)
class TilingSpec:
    """Tile edge in output pixels and the per-side overlap in low-resolution pixels.

    With ``widen_to_receptive_field`` the overlap grows, when needed, to cover
    the network's receptive field so tiled output matches a single pass.
    """

    tile: int = 512
    overlap_lowres: int = 2
    pad_mode: str = "reflect"
    widen_to_receptive_field: bool = True

    def __post_init__(self):
        if self.tile < 1 or self.overlap_lowres < 1:
            raise InvariantViolation("tile and overlap_lowres must be positive")
        if self.pad_mode not in ("reflect", "symmetric", "edge"):
            raise InvariantViolation(f"unsupported pad mode {self.pad_mode!r}")

    def overlap_highres(self, config: NetworkConfig) -> int:
        low = self.overlap_lowres
        if self.widen_to_receptive_field:
            low = max(low, math.ceil(config.receptive_radius / config.scale))
        return low * config.scale


def pad_to_multiple(scene: MultiResScene, multiple: int, mode: str = "reflect"):
    """Pad every band on the right/bottom so the finest band is a multiple of ``multiple``.

    Coarse bands are padded by the matching fraction; returns ``(scene, (width, height))``.
    """
    if multiple < 1:
        raise InvariantViolation("multiple must be >= 1")
    ratio = 6 if scene.has_c else 2
    m = multiple * ratio // math.gcd(multiple, ratio)
    w, h = scene.width, scene.height
    pw, ph = (-w) % m, (-h) % m
    if pw == 0 and ph == 0:
        return scene, (w, h)

    def pad(images, f):
        return tuple(
            BandImage(im.band_id, im.gsd, np.pad(im.data, ((0, ph // f), (0, pw // f)), mode=mode))
            for im in images
        )

    padded = MultiResScene(
        pad(scene.set_a, 1),
        pad(scene.set_b, 2),
        pad(scene.set_c, 6) if scene.has_c else None,
        scene.base_gsd,
    )
    return padded, (w, h)


def crop_scene(scene: MultiResScene, dims: Tuple[int, int]) -> MultiResScene:
    w, h = dims

    def crop(images, f):
        return tuple(BandImage(im.band_id, im.gsd, im.data[: h // f, : w // f]) for im in images)

    return MultiResScene(
        crop(scene.set_a, 1),
        crop(scene.set_b, 2),
        crop(scene.set_c, 6) if scene.has_c else None,
        scene.base_gsd,
    )


def tile_windows(size: int, tile: int, overlap: int):
    """Split ``[0, size)`` into ``(window_start, window_stop, keep_start, keep_stop)`` tuples.

    Windows start every ``tile - 2*overlap`` pixels; the kept interiors partition the axis.
    """
    if size <= tile:
        return [(0, size, 0, size)]
    step = tile - 2 * overlap
    if step <= 0:
        raise TileTooSmall(f"tile {tile} leaves no interior after cropping {overlap} px per side")
    out = []
    start = 0
    while True:
        stop = min(start + tile, size)
        keep0 = 0 if start == 0 else start + overlap
        last = stop == size
        keep1 = size if last else start + step + overlap
        out.append((start, stop, keep0, keep1))
        if last:
            return out
        start += step


def _upsample_window(arr: np.ndarray, s: int, r0: int, r1: int, c0: int, c1: int, kind: str) -> np.ndarray:
    """Rows ``[r0, r1)`` x cols ``[c0, c1)`` of the whole-image upsampling of ``arr`` (H, W, C)."""
    halo = 1 if kind == "bilinear" else 2
    h, w = arr.shape[:2]
    lr0, lr1, lc0, lc1 = r0 // s, r1 // s, c0 // s, c1 // s
    a0, a1 = max(0, lr0 - halo), min(h, lr1 + halo)
    b0, b1 = max(0, lc0 - halo), min(w, lc1 + halo)
    up = upsample_array(arr[a0:a1, b0:b1], s, kind, axes=(0, 1))
    oy, ox = (lr0 - a0) * s, (lc0 - b0) * s
    return up[oy : oy + (r1 - r0), ox : ox + (c1 - c0)]


def _check_model(scene: MultiResScene, config: NetworkConfig, weights: NetworkWeights):
    try:
        weights.check(config)
    except ShapeMismatch as exc:
        raise WeightsConfigMismatch(str(exc)) from exc
    if config.scale == 6 and not scene.has_c:
        raise MissingBand("the 6x network needs a scene with C bands")
    if config.scale == 6 and config.output_channels != 2 or config.scale == 2 and config.output_channels != 6:
        raise WeightsConfigMismatch(f"config {config} is not a supported variant")


def superresolve(
    scene: MultiResScene,
    config: NetworkConfig,
    weights: NetworkWeights,
    tiling: Optional[TilingSpec] = None,
    value_scale: float = 2000.0,
    timings: Optional[list] = None,
) -> List[BandImage]:
    """Super-resolve set B (2x network) or set C (6x network) to the base GSD.

    The long skip is added in reflectance units, so a network whose last
    layer outputs zero returns plain interpolation of the target bands.
    """
    tiling = tiling or TilingSpec()
    _check_model(scene, config, weights)
    s = config.scale
    # tiles must start on the coarse grid
    tile = tiling.tile - tiling.tile % s
    if tile == 0:
        raise TileTooSmall(f"tile {tiling.tile} is smaller than the scale factor {s}")
    padded, dims = pad_to_multiple(scene, s, tiling.pad_mode)
    kind = config.upsampling
    dtype = np.result_type(weights.first.kernel.dtype, np.float32).type
    scale = dtype(value_scale)

    a = padded.stack("a").astype(dtype)
    b = padded.stack("b").astype(dtype)
    c = padded.stack("c").astype(dtype) if s == 6 else None
    a_s, b_s = a / scale, b / scale
    c_s = None if c is None else c / scale
    target_raw = b if s == 2 else c
    target_ids = BANDS_B if s == 2 else BANDS_C

    H, W = padded.height, padded.width
    ov = tiling.overlap_highres(config)
    rows = tile_windows(H, tile, ov)
    cols = tile_windows(W, tile, ov)
    out = np.empty((H, W, config.output_channels), dtype=dtype)
    for r0, r1, kr0, kr1 in rows:
        for c0, c1, kc0, kc1 in cols:
            t_start = time.perf_counter()
            parts = [a_s[r0:r1, c0:c1], _upsample_window(b_s, 2, r0, r1, c0, c1, kind)]
            if s == 6:
                parts.append(_upsample_window(c_s, 6, r0, r1, c0, c1, kind))
            x0 = np.concatenate(parts, axis=-1)[None]
            correction, _ = forward_from_x0(config, weights, x0, 0.0)
            skip = _upsample_window(target_raw, s, r0, r1, c0, c1, kind)
            tile_out = skip + scale * correction[0].astype(dtype)
            out[kr0:kr1, kc0:kc1] = tile_out[kr0 - r0 : kr1 - r0, kc0 - c0 : kc1 - c0]
            elapsed = time.perf_counter() - t_start
            if timings is not None:
                timings.append(((r0, r1, c0, c1), elapsed))
            log.debug("tile rows %d:%d cols %d:%d took %.3fs", r0, r1, c0, c1, elapsed)
    w0, h0 = dims
    gsd = padded.base_gsd
    return [BandImage(bid, gsd, out[:h0, :w0, i]) for i, bid in enumerate(target_ids)]


def superresolve_all(
    scene: MultiResScene,
    model_2x: Tuple[NetworkConfig, NetworkWeights],
    model_6x: Optional[Tuple[NetworkConfig, NetworkWeights]] = None,
    tiling: Optional[TilingSpec] = None,
    value_scale: float = 2000.0,
    timings: Optional[list] = None,
) -> List[BandImage]:
    """A bands plus super-resolved B (and C when a 6x model is given), at the base GSD.

    Both networks read the original inputs; the 6x pass never sees 2x outputs.
    """
    cfg2, w2 = model_2x
    if cfg2.scale != 2:
        raise WeightsConfigMismatch("model_2x must be a 2x network")
    bands = list(scene.set_a) + superresolve(scene, cfg2, w2, tiling, value_scale, timings)
    if model_6x is not None:
        cfg6, w6 = model_6x
        if cfg6.scale != 6:
            raise WeightsConfigMismatch("model_6x must be a 6x network")
        bands += superresolve(scene, cfg6, w6, tiling, value_scale, timings)
    order = {b: i for i, b in enumerate(OUTPUT_ORDER)}
    return sorted(bands, key=lambda im: order[im.band_id])
