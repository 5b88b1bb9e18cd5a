"""In-memory raster types: single bands and co-registered multi-resolution scenes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InvariantViolation, MissingBand

VALID_GSD = (10, 20, 40, 60, 80, 120, 360)

BANDS_A = ("B2", "B3", "B4", "B8")
BANDS_B = ("B5", "B6", "B7", "B8a", "B11", "B12")
BANDS_C = ("B1", "B9")


@dataclass(frozen=True)
class BandImage:
    """One band raster in reflectance x 10^4 units.

    ``data`` is a read-only ``(height, width)`` float32 array.
    """

    band_id: str
    gsd: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 2:
            raise InvariantViolation(f"{self.band_id}: band data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvariantViolation(f"{self.band_id}: empty raster")
        if not np.isfinite(arr).all():
            raise InvariantViolation(f"{self.band_id}: raster contains NaN or Inf")
        if int(self.gsd) not in VALID_GSD:
            raise InvariantViolation(f"{self.band_id}: gsd {self.gsd} m not in {VALID_GSD}")
        if not self.band_id or len(self.band_id.encode("ascii")) > 8:
            raise InvariantViolation(f"band id {self.band_id!r} must be 1-8 ASCII characters")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "gsd", int(self.gsd))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray, gsd: Optional[int] = None) -> "BandImage":
        return BandImage(self.band_id, self.gsd if gsd is None else gsd, data)

    def __eq__(self, other):
        if not isinstance(other, BandImage):
            return NotImplemented
        return (
            self.band_id == other.band_id
            and self.gsd == other.gsd
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


def _check_group(images: Sequence[BandImage], expected: Sequence[str], name: str):
    ids = [im.band_id for im in images]
    missing = [b for b in expected if b not in ids]
    if missing:
        raise MissingBand(f"set {name} is missing bands {missing}")
    if sorted(ids) != sorted(expected):
        raise InvariantViolation(f"set {name} must hold exactly {list(expected)}, got {ids}")


@dataclass(frozen=True)
class MultiResScene:
    """Bands A at the base GSD, bands B at twice it and optional bands C at six times it."""

    set_a: tuple
    set_b: tuple
    set_c: Optional[tuple] = None
    base_gsd: int = 10

    def __post_init__(self):
        order = {b: i for i, b in enumerate(BANDS_A + BANDS_B + BANDS_C)}
        set_a = tuple(sorted(self.set_a, key=lambda im: order.get(im.band_id, 99)))
        set_b = tuple(sorted(self.set_b, key=lambda im: order.get(im.band_id, 99)))
        set_c = None
        if self.set_c is not None:
            set_c = tuple(sorted(self.set_c, key=lambda im: order.get(im.band_id, 99)))
        _check_group(set_a, BANDS_A, "A")
        _check_group(set_b, BANDS_B, "B")
        if set_c is not None:
            _check_group(set_c, BANDS_C, "C")

        h, w = set_a[0].data.shape
        ratio = 6 if set_c is not None else 2
        if w % ratio or h % ratio:
            raise DimensionMismatch(f"base raster {w}x{h} is not divisible by {ratio}")
        groups = [(set_a, 1), (set_b, 2)] + ([(set_c, 6)] if set_c is not None else [])
        for group, factor in groups:
            for im in group:
                if im.data.shape != (h // factor, w // factor):
                    raise DimensionMismatch(
                        f"{im.band_id} is {im.width}x{im.height}, expected {w // factor}x{h // factor}"
                    )
                if im.gsd != self.base_gsd * factor:
                    raise InvariantViolation(
                        f"{im.band_id} has gsd {im.gsd}, expected {self.base_gsd * factor}"
                    )
        object.__setattr__(self, "set_a", set_a)
        object.__setattr__(self, "set_b", set_b)
        object.__setattr__(self, "set_c", set_c)

    @property
    def width(self) -> int:
        return self.set_a[0].width

    @property
    def height(self) -> int:
        return self.set_a[0].height

    @property
    def has_c(self) -> bool:
        return self.set_c is not None

    def bands(self) -> list:
        return list(self.set_a) + list(self.set_b) + list(self.set_c or ())

    def stack(self, group: str) -> np.ndarray:
        """Return one band group as an ``(H, W, C)`` float32 array."""
        images = {"a": self.set_a, "b": self.set_b, "c": self.set_c}[group.lower()]
        if images is None:
            raise MissingBand(f"scene has no set {group.upper()}")
        return np.stack([im.data for im in images], axis=-1)


def band_stack(images: Sequence[BandImage]) -> np.ndarray:
    return np.stack([im.data for im in images], axis=-1)


def bands_from_stack(stack: np.ndarray, band_ids: Sequence[str], gsd: int) -> list:
    if stack.shape[-1] != len(band_ids):
        raise DimensionMismatch(f"{stack.shape[-1]} channels for {len(band_ids)} band ids")
    return [BandImage(b, gsd, stack[..., i]) for i, b in enumerate(band_ids)]
