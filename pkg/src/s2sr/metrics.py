"""Reconstruction quality measures: RMSE, SRE, SAM and UIQ, plus a report.

All inputs are in native reflectance x 10^4 units; nothing is normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AllWindowsDegenerate, BandMismatch, CorruptHeader, DegenerateTruth, ShapeMismatch
from .scene import BandImage

UIQ_WINDOW = 8


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, BandImage) else x, dtype=np.float64)


def _pair(pred, truth):
    p, t = _arr(pred), _arr(truth)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs truth {t.shape}")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def sre(pred, truth) -> float:
    """Signal to reconstruction error ratio in dB; ``inf`` for a perfect reconstruction."""
    p, t = _pair(pred, truth)
    mu = t.mean()
    if mu == 0:
        raise DegenerateTruth("truth has zero mean")
    mse = np.mean((p - t) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(mu**2 / mse))


def sam_details(pred, truth):
    """Return ``(mean angle in degrees, number of zero-norm pixels skipped)``.

    Bands are the last axis.
    """
    p, t = _pair(pred, truth)
    if p.ndim < 2 or p.shape[-1] < 2:
        raise ShapeMismatch("SAM needs at least two bands on the last axis")
    p = p.reshape(-1, p.shape[-1])
    t = t.reshape(-1, t.shape[-1])
    norms = np.linalg.norm(p, axis=1) * np.linalg.norm(t, axis=1)
    valid = norms > 0
    skipped = int((~valid).sum())
    if not valid.any():
        return math.nan, skipped
    cos = np.einsum("ij,ij->i", p[valid], t[valid]) / norms[valid]
    angles = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return float(angles.mean()), skipped


def sam(pred, truth) -> float:
    return sam_details(pred, truth)[0]


def uiq(pred, truth, window: int = UIQ_WINDOW, chunk_rows: int = 64) -> float:
    """Universal image quality index averaged over ``window x window`` sliding windows.

    Windows where either image is constant are skipped. When both window
    means are zero the luminance term is taken as 1.
    """
    p, t = _pair(pred, truth)
    if p.ndim != 2 or p.shape[0] < window or p.shape[1] < window:
        raise ShapeMismatch(f"image {p.shape} is smaller than the {window}x{window} window")
    n_rows = p.shape[0] - window + 1
    total, count = 0.0, 0
    for r0 in range(0, n_rows, chunk_rows):
        r1 = min(r0 + chunk_rows, n_rows)
        wp = sliding_window_view(p[r0 : r1 + window - 1], (window, window))
        wt = sliding_window_view(t[r0 : r1 + window - 1], (window, window))
        mp = wp.mean(axis=(-2, -1))
        mt = wt.mean(axis=(-2, -1))
        dp = wp - mp[..., None, None]
        dt = wt - mt[..., None, None]
        vp = (dp * dp).mean(axis=(-2, -1))
        vt = (dt * dt).mean(axis=(-2, -1))
        cov = (dp * dt).mean(axis=(-2, -1))
        ok = (vp > 0) & (vt > 0)
        sp, st = np.sqrt(vp[ok]), np.sqrt(vt[ok])
        corr = cov[ok] / (sp * st)
        msum = mp[ok] ** 2 + mt[ok] ** 2
        lum = np.where(msum > 0, 2 * mp[ok] * mt[ok] / np.where(msum > 0, msum, 1.0), 1.0)
        contrast = 2 * sp * st / (vp[ok] + vt[ok])
        q = corr * lum * contrast
        total += float(q.sum())
        count += int(ok.sum())
    if count == 0:
        raise AllWindowsDegenerate("every window is constant in one of the images")
    return total / count


# ---------------------------------------------------------------------------
# reports


@dataclass
class BandMetrics:
    band_id: str
    rmse: float
    sre: float
    uiq: float


def _finite_mean(values):
    finite = [v for v in values if math.isfinite(v)]
    return (sum(finite) / len(finite) if finite else math.nan), len(values) - len(finite)


@dataclass
class MetricsReport:
    bands: List[BandMetrics]
    sam: float
    sam_skipped: int = 0

    @property
    def mean_rmse(self) -> float:
        return _finite_mean([b.rmse for b in self.bands])[0]

    @property
    def mean_sre(self) -> float:
        return _finite_mean([b.sre for b in self.bands])[0]

    @property
    def sre_sentinels(self) -> int:
        return _finite_mean([b.sre for b in self.bands])[1]

    @property
    def mean_uiq(self) -> float:
        return _finite_mean([b.uiq for b in self.bands])[0]

    def band(self, band_id: str) -> BandMetrics:
        for b in self.bands:
            if b.band_id == band_id:
                return b
        raise KeyError(band_id)

    def to_table(self) -> str:
        """RMSE, SRE and UIQ sections with one column per band plus the average."""
        ids = [b.band_id for b in self.bands] + ["Average"]
        head = f"{'':<6}" + "".join(f"{i:>10}" for i in ids)
        rows = [head]
        for name, attr, mean, fmt in (
            ("RMSE", "rmse", self.mean_rmse, "{:>10.2f}"),
            ("SRE", "sre", self.mean_sre, "{:>10.2f}"),
            ("UIQ", "uiq", self.mean_uiq, "{:>10.4f}"),
        ):
            vals = [getattr(b, attr) for b in self.bands] + [mean]
            rows.append(f"{name:<6}" + "".join(fmt.format(v) if math.isfinite(v) else f"{'inf':>10}" for v in vals))
        rows.append(f"{'SAM':<6}{self.sam:>10.4f}")
        if self.sre_sentinels:
            rows.append(f"# SRE average excludes {self.sre_sentinels} perfect band(s)")
        if self.sam_skipped:
            rows.append(f"# SAM skipped {self.sam_skipped} zero-norm pixel(s)")
        return "\n".join(rows) + "\n"

    def to_keyvalue(self) -> str:
        lines = ["format: s2sr-metrics 1", "units: rmse=reflectance*1e4 sre=dB sam=degrees uiq=1"]
        for b in self.bands:
            lines += [f"{b.band_id}.rmse: {b.rmse!r}", f"{b.band_id}.sre: {b.sre!r}", f"{b.band_id}.uiq: {b.uiq!r}"]
        lines += [
            f"mean.rmse: {self.mean_rmse!r}",
            f"mean.sre: {self.mean_sre!r}",
            f"mean.sre_sentinels: {self.sre_sentinels}",
            f"mean.uiq: {self.mean_uiq!r}",
            f"sam: {self.sam!r}",
            f"sam.skipped: {self.sam_skipped}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_keyvalue(cls, text: str) -> "MetricsReport":
        values, order = {}, []
        for line in text.splitlines():
            key, sep, value = line.partition(":")
            if not sep:
                continue
            key, value = key.strip(), value.strip()
            if key in ("format", "units") or key.startswith("mean."):
                continue
            if key in ("sam", "sam.skipped"):
                values[key] = value
                continue
            band, _, metric = key.rpartition(".")
            if band not in order:
                order.append(band)
            values[(band, metric)] = float(value)
        try:
            bands = [BandMetrics(b, values[(b, "rmse")], values[(b, "sre")], values[(b, "uiq")]) for b in order]
            return cls(bands, float(values["sam"]), int(values.get("sam.skipped", 0)))
        except KeyError as exc:
            raise CorruptHeader(f"metrics report lacks {exc}") from exc


def evaluate(pred_bands: Sequence[BandImage], truth_bands: Sequence[BandImage]) -> MetricsReport:
    """Per-band RMSE/SRE/UIQ and the scene SAM over the band stack, in truth order."""
    pred = {b.band_id: b for b in pred_bands}
    truth_ids = [b.band_id for b in truth_bands]
    if sorted(pred) != sorted(truth_ids) or len(pred) != len(pred_bands):
        raise BandMismatch(f"prediction bands {sorted(pred)} vs truth bands {sorted(truth_ids)}")
    if len({t.data.shape for t in truth_bands}) > 1:
        raise ShapeMismatch("truth bands differ in size; SAM needs a common grid")
    rows = []
    for t in truth_bands:
        p = pred[t.band_id]
        if p.data.shape != t.data.shape:
            raise BandMismatch(f"{t.band_id}: prediction {p.data.shape} vs truth {t.data.shape}")
        rows.append(BandMetrics(t.band_id, rmse(p, t), sre(p, t), uiq(p, t)))
    if len(truth_bands) >= 2:
        ps = np.stack([pred[t.band_id].data for t in truth_bands], axis=-1)
        ts = np.stack([t.data for t in truth_bands], axis=-1)
        angle, skipped = sam_details(ps, ts)
    else:
        angle, skipped = math.nan, 0
    return MetricsReport(rows, angle, skipped)
