"""Binary band rasters, text manifests and weight checkpoints.

Band file layout (little-endian)::

    offset  size  field
    0       4     magic b"S2SR"
    4       2     format version (u16)
    6       4     width (u32)
    10      4     height (u32)
    14      2     gsd in metres (u16)
    16      8     band id, ASCII, NUL padded
    24      8     reserved, zero
    32      4*W*H float32 samples, row-major

Manifests are UTF-8 ``key: value`` lines::

    version: 1
    base_gsd: 10
    band: B2 B2.s2sr 96 96
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import (
    CorruptHeader,
    DataError,
    DimensionMismatch,
    InvariantViolation,
    IoFailure,
    MissingBand,
    ShapeMismatch,
    VersionUnsupported,
)
from .network import NetworkConfig, NetworkWeights, param_count, weight_shapes
from .scene import BANDS_A, BANDS_B, BANDS_C, BandImage, MultiResScene

MAGIC = b"S2SR"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHIIH8s8x")
assert HEADER.size == 32

MANIFEST_VERSION = 1

CKPT_MAGIC = b"S2CK"
CKPT_VERSION = 1
# d, f, input channels, output channels, lambda, scale, upsampling flag, param count, tensor count
CKPT_HEADER = struct.Struct("<4sHIIIIdIBQI")


def _write_bytes(path, payload: bytes):
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def encode_band(image: BandImage) -> bytes:
    if not np.isfinite(image.data).all():
        raise InvariantViolation(f"{image.band_id}: raster contains NaN or Inf")
    header = HEADER.pack(
        MAGIC, FORMAT_VERSION, image.width, image.height, image.gsd, image.band_id.encode("ascii")
    )
    return header + np.ascontiguousarray(image.data, dtype="<f4").tobytes()


def decode_band(buf: bytes, source: str = "<bytes>") -> BandImage:
    if len(buf) < HEADER.size:
        raise CorruptHeader(f"{source}: {len(buf)} bytes is shorter than the 32-byte header")
    magic, version, width, height, gsd, band_id = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CorruptHeader(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{source}: band format version {version}")
    expected = HEADER.size + 4 * width * height
    if len(buf) != expected:
        raise CorruptHeader(f"{source}: {len(buf)} bytes, header implies {expected}")
    try:
        name = band_id.rstrip(b"\0").decode("ascii")
    except UnicodeDecodeError as exc:
        raise CorruptHeader(f"{source}: band id is not ASCII") from exc
    data = np.frombuffer(buf, dtype="<f4", offset=HEADER.size).reshape(height, width)
    return BandImage(name, gsd, data.astype(np.float32))


def write_band(image: BandImage, path) -> None:
    _write_bytes(path, encode_band(image))


def read_band(path) -> BandImage:
    return decode_band(_read_bytes(path), str(path))


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    band_id: str
    path: str
    width: int
    height: int


@dataclass(frozen=True)
class SceneManifest:
    version: int
    base_gsd: int
    entries: tuple

    def render(self) -> str:
        lines = [f"version: {self.version}", f"base_gsd: {self.base_gsd}"]
        for e in self.entries:
            lines.append(f"band: {e.band_id} {e.path} {e.width} {e.height}")
        return "\n".join(lines) + "\n"


def parse_manifest(text: str, source: str = "<manifest>") -> SceneManifest:
    version = base_gsd = None
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise CorruptHeader(f"{source}:{lineno}: expected 'key: value'")
        key, value = key.strip(), value.strip()
        try:
            if key == "version":
                version = int(value)
            elif key == "base_gsd":
                base_gsd = int(value)
            elif key == "band":
                band_id, path, width, height = value.split()
                entries.append(ManifestEntry(band_id, path, int(width), int(height)))
            else:
                raise CorruptHeader(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise CorruptHeader(f"{source}:{lineno}: cannot parse {raw!r}") from exc
    if version is None or base_gsd is None:
        raise CorruptHeader(f"{source}: manifest needs 'version' and 'base_gsd'")
    if version != MANIFEST_VERSION:
        raise VersionUnsupported(f"{source}: manifest version {version}")
    ids = [e.band_id for e in entries]
    if len(set(ids)) != len(ids):
        raise CorruptHeader(f"{source}: duplicate band entries")
    return SceneManifest(version, base_gsd, tuple(entries))


def read_manifest(path) -> SceneManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, str(path))


def read_bands(manifest_path) -> List[BandImage]:
    """Load every band a manifest lists, in manifest order, without grouping checks."""
    manifest = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    out = []
    for e in manifest.entries:
        path = root / e.path
        if not path.exists():
            raise MissingBand(f"{e.band_id}: file {path} does not exist")
        image = read_band(path)
        if (image.width, image.height) != (e.width, e.height):
            raise DimensionMismatch(
                f"{e.band_id}: manifest says {e.width}x{e.height}, file holds {image.width}x{image.height}"
            )
        if image.band_id != e.band_id:
            raise CorruptHeader(f"{path}: file holds band {image.band_id}, manifest says {e.band_id}")
        out.append(image)
    return out


def write_bands(images: Sequence[BandImage], directory, base_gsd: int, manifest_name: str = "manifest.txt") -> Path:
    """Write each band as ``<band_id>.s2sr`` plus a manifest; returns the manifest path."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from exc
    entries = []
    for im in images:
        name = f"{im.band_id}.s2sr"
        write_band(im, directory / name)
        entries.append(ManifestEntry(im.band_id, name, im.width, im.height))
    manifest = SceneManifest(MANIFEST_VERSION, int(base_gsd), tuple(entries))
    path = directory / manifest_name
    _write_bytes(path, manifest.render().encode("utf-8"))
    return path


def read_scene(manifest_path) -> MultiResScene:
    manifest = read_manifest(manifest_path)
    bands = {im.band_id: im for im in read_bands(manifest_path)}
    for b in BANDS_A + BANDS_B:
        if b not in bands:
            raise MissingBand(f"scene manifest {manifest_path} lacks band {b}")
    present_c = [b for b in BANDS_C if b in bands]
    if present_c and len(present_c) != len(BANDS_C):
        raise MissingBand(f"scene manifest {manifest_path} has a partial C set {present_c}")
    extra = set(bands) - set(BANDS_A + BANDS_B + BANDS_C)
    if extra:
        raise InvariantViolation(f"unexpected bands {sorted(extra)}")
    return MultiResScene(
        tuple(bands[b] for b in BANDS_A),
        tuple(bands[b] for b in BANDS_B),
        tuple(bands[b] for b in BANDS_C) if present_c else None,
        base_gsd=manifest.base_gsd,
    )


def write_scene(scene: MultiResScene, directory, manifest_name: str = "manifest.txt") -> Path:
    return write_bands(scene.bands(), directory, scene.base_gsd, manifest_name)


# ---------------------------------------------------------------------------
# checkpoints


def encode_weights(config: NetworkConfig, weights: NetworkWeights) -> bytes:
    weights.check(config)
    tensors = weights.tensors()
    _, n_params = param_count(config)
    parts = [
        CKPT_HEADER.pack(
            CKPT_MAGIC,
            CKPT_VERSION,
            config.d,
            config.f,
            config.input_channels,
            config.output_channels,
            float(config.lam),
            config.scale,
            0 if config.upsampling == "bilinear" else 1,
            n_params,
            len(tensors),
        )
    ]
    for t in tensors:
        parts.append(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_weights(buf: bytes, expected_config: Optional[NetworkConfig] = None, source: str = "<bytes>"):
    if len(buf) < CKPT_HEADER.size:
        raise CorruptHeader(f"{source}: truncated checkpoint header")
    magic, version, d, f, cin, cout, lam, scale, ups, n_params, n_tensors = CKPT_HEADER.unpack_from(buf)
    if magic != CKPT_MAGIC:
        raise CorruptHeader(f"{source}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise VersionUnsupported(f"{source}: checkpoint version {version}")
    try:
        config = NetworkConfig(d, f, cin, cout, lam, scale, "bilinear" if ups == 0 else "bicubic")
    except DataError as exc:
        raise CorruptHeader(f"{source}: invalid embedded config ({exc})") from exc
    if expected_config is not None and expected_config != config:
        raise ShapeMismatch(f"{source}: checkpoint holds {config}, caller expects {expected_config}")
    shapes = weight_shapes(config)
    if n_tensors != len(shapes) or n_params != param_count(config)[1]:
        raise CorruptHeader(f"{source}: header counts disagree with the embedded config")
    offset = CKPT_HEADER.size
    tensors = []
    for shape in shapes:
        try:
            (ndim,) = struct.unpack_from("<I", buf, offset)
            dims = struct.unpack_from(f"<{ndim}I", buf, offset + 4)
        except struct.error as exc:
            raise CorruptHeader(f"{source}: truncated tensor header") from exc
        offset += 4 + 4 * ndim
        if tuple(dims) != shape:
            raise ShapeMismatch(f"{source}: tensor shape {dims}, config implies {shape}")
        size = 4 * int(np.prod(shape))
        if offset + size > len(buf):
            raise CorruptHeader(f"{source}: truncated tensor data")
        tensors.append(np.frombuffer(buf, dtype="<f4", count=size // 4, offset=offset).reshape(shape).astype(np.float32))
        offset += size
    if offset != len(buf):
        raise CorruptHeader(f"{source}: {len(buf) - offset} trailing bytes")
    return config, NetworkWeights.from_tensors(tensors)


def save_weights(config: NetworkConfig, weights: NetworkWeights, path) -> None:
    _write_bytes(path, encode_weights(config, weights))


def load_weights(path, expected_config: Optional[NetworkConfig] = None):
    return decode_weights(_read_bytes(path), expected_config, str(path))


def checkpoint_param_count(path) -> int:
    buf = _read_bytes(path)
    if len(buf) < CKPT_HEADER.size:
        raise CorruptHeader(f"{path}: truncated checkpoint header")
    return CKPT_HEADER.unpack_from(buf)[9]


# ---------------------------------------------------------------------------
# patch sets
#
# magic b"S2PT", version u16, flags u16 (bit 0: C inputs present), then the
# arrays inputs_a, inputs_b, targets[, inputs_c], each as ndim u32, dims u32
# and float32 LE data.

PATCH_MAGIC = b"S2PT"
PATCH_VERSION = 1
PATCH_HEADER = struct.Struct("<4sHH")


def encode_patches(patches) -> bytes:
    arrays = [patches.inputs_a, patches.inputs_b, patches.targets]
    if patches.inputs_c is not None:
        arrays.append(patches.inputs_c)
    parts = [PATCH_HEADER.pack(PATCH_MAGIC, PATCH_VERSION, int(patches.inputs_c is not None))]
    for a in arrays:
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_patches(buf: bytes, source: str = "<bytes>"):
    from .train import PatchSet

    if len(buf) < PATCH_HEADER.size:
        raise CorruptHeader(f"{source}: truncated patch header")
    magic, version, flags = PATCH_HEADER.unpack_from(buf)
    if magic != PATCH_MAGIC:
        raise CorruptHeader(f"{source}: bad patch magic {magic!r}")
    if version != PATCH_VERSION:
        raise VersionUnsupported(f"{source}: patch format version {version}")
    offset = PATCH_HEADER.size
    arrays = []
    for _ in range(4 if flags & 1 else 3):
        try:
            (ndim,) = struct.unpack_from("<I", buf, offset)
            if ndim != 4:
                raise CorruptHeader(f"{source}: patch array has {ndim} dimensions")
            dims = struct.unpack_from("<4I", buf, offset + 4)
        except struct.error as exc:
            raise CorruptHeader(f"{source}: truncated patch array header") from exc
        offset += 20
        count = int(np.prod(dims))
        if offset + 4 * count > len(buf):
            raise CorruptHeader(f"{source}: truncated patch data")
        arrays.append(np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32))
        offset += 4 * count
    if offset != len(buf):
        raise CorruptHeader(f"{source}: {len(buf) - offset} trailing bytes")
    a, b, t = arrays[:3]
    c = arrays[3] if flags & 1 else None
    try:
        return PatchSet(a, b, t, c)
    except ShapeMismatch as exc:
        raise CorruptHeader(f"{source}: {exc}") from exc


def save_patches(patches, path) -> None:
    _write_bytes(path, encode_patches(patches))


def load_patches(path):
    return decode_patches(_read_bytes(path), str(path))
