"""Electrodogram-domain metrics: SNR improvement, LCC and electric interaural coherence.

Correlations of constant channels are undefined (N-of-M selection leaves many
channels silent). They come back masked in a ``numpy.ma.MaskedArray`` and are
skipped, and counted, when averaging across electrodes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .ace import Electrodogram

SNRI_CAP_DB = 60.0
_TINY = 1e-12


class MetricError(ValueError):
    pass


class Snri(NamedTuple):
    db: float
    capped: bool = False


def _amps(p) -> np.ndarray:
    return p.amplitudes if isinstance(p, Electrodogram) else np.asarray(p, dtype=np.float64)


def _same_shape(*arrays) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise MetricError(f"electrodogram shapes differ: {sorted(shapes)}")


def snri(p_noisy, p_clean, p_denoised) -> Snri:
    """SNR improvement in dB: noisy-to-clean error energy over denoised-to-clean error energy.

    Perfect reconstruction caps at +60 dB, a perfect noisy input at -60 dB;
    both set ``capped``.
    """
    n, c, d = _amps(p_noisy), _amps(p_clean), _amps(p_denoised)
    _same_shape(n, c, d)
    num = float(np.sum((n - c) ** 2))
    den = float(np.sum((d - c) ** 2))
    if den < _TINY:
        return Snri(SNRI_CAP_DB, True)
    if num < _TINY:
        return Snri(-SNRI_CAP_DB, True)
    return Snri(10 * math.log10(num / den))


def pearson(x, y) -> float | None:
    """Pearson correlation, or ``None`` when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"pearson needs two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise MetricError("pearson needs at least two samples")
    r = rowwise_pearson(x[None, :], y[None, :])
    return None if r.mask[0] else float(r[0])


def rowwise_pearson(a: np.ndarray, b: np.ndarray) -> np.ma.MaskedArray:
    """Correlation of matching rows; rows constant in either input are masked."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if a.shape[1] < 2:
        raise MetricError("correlation needs at least two frames")
    undefined = (np.ptp(a, axis=1) == 0) | (np.ptp(b, axis=1) == 0)
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    num = np.sum(ac * bc, axis=1)
    den = np.sqrt(np.sum(ac * ac, axis=1) * np.sum(bc * bc, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(undefined, 0.0, num / np.where(undefined, 1.0, den))
    return np.ma.MaskedArray(np.clip(r, -1.0, 1.0), mask=undefined)


def lcc_channels(p_clean, p_denoised) -> np.ma.MaskedArray:
    """Per-electrode linear correlation between clean and processed electrodograms."""
    return rowwise_pearson(_amps(p_clean), _amps(p_denoised))


def eic_channels(p_right, p_left) -> np.ma.MaskedArray:
    """Per-electrode electric interaural coherence between the two ears."""
    return rowwise_pearson(_amps(p_right), _amps(p_left))


def electrode_average(coeffs: np.ma.MaskedArray) -> float | None:
    """Mean over defined channels; ``None`` when every channel is undefined."""
    coeffs = np.ma.asarray(coeffs)
    if coeffs.count() == 0:
        return None
    return float(coeffs.mean())


def _azimuth_average(sweep: Mapping[float, Sequence[tuple]], channel_fn):
    azimuths = np.array(sorted(sweep), dtype=np.float64)
    values = np.zeros(len(azimuths))
    mask = np.zeros(len(azimuths), dtype=bool)
    for i, az in enumerate(azimuths):
        per_scene = [electrode_average(channel_fn(a, b)) for a, b in sweep[az]]
        per_scene = [v for v in per_scene if v is not None]
        if per_scene:
            values[i] = np.mean(per_scene)
        else:
            mask[i] = True
    return azimuths, np.ma.MaskedArray(values, mask=mask)


def lcc_azimuth(sweep: Mapping[float, Sequence[tuple]]):
    """LCC averaged across electrodes (and scenes) per noise azimuth.

    ``sweep`` maps azimuth -> list of ``(p_clean, p_processed)`` pairs.
    Returns ``(azimuths, values)`` sorted by azimuth.
    """
    return _azimuth_average(sweep, lcc_channels)


def eic_azimuth(sweep: Mapping[float, Sequence[tuple]]):
    """EIC averaged across electrodes per azimuth; pairs are ``(p_right, p_left)``."""
    return _azimuth_average(sweep, eic_channels)


@dataclass
class MetricReport:
    """Metrics for one scene x variant, both ears."""

    scene: str
    variant: str
    seed: int
    snr_db: float
    noise_azimuth: float
    snri: dict[str, Snri] = field(default_factory=dict)
    lcc: dict[str, np.ma.MaskedArray] = field(default_factory=dict)
    eic: np.ma.MaskedArray | None = None

    @classmethod
    def compute(cls, scene: str, variant: str, seed: int, snr_db: float, noise_azimuth: float,
                noisy: tuple, clean: tuple, processed: tuple) -> MetricReport:
        """Each of ``noisy``/``clean``/``processed`` is a (left, right) electrodogram pair."""
        rep = cls(scene, variant, seed, snr_db, noise_azimuth)
        for i, side in enumerate(("left", "right")):
            rep.snri[side] = snri(noisy[i], clean[i], processed[i])
            rep.lcc[side] = lcc_channels(clean[i], processed[i])
        rep.eic = eic_channels(processed[1], processed[0])
        return rep

    def rows(self) -> list[dict]:
        out = []
        for side in ("left", "right"):
            lcc = self.lcc[side]
            row = {
                "scene": self.scene, "variant": self.variant, "side": side, "seed": self.seed,
                "snr_db": _fmt(self.snr_db), "noise_azimuth": _fmt(self.noise_azimuth),
                "snri_db": _fmt(self.snri[side].db), "snri_capped": int(self.snri[side].capped),
                "lcc_mean": _fmt(electrode_average(lcc)), "lcc_undefined": int(np.ma.count_masked(lcc)),
                "eic_mean": _fmt(electrode_average(self.eic)), "eic_undefined": int(np.ma.count_masked(self.eic)),
            }
            for k in range(len(lcc)):
                row[f"lcc_{k + 1}"] = _fmt(None if lcc.mask[k] else lcc[k])
            for k in range(len(self.eic)):
                row[f"eic_{k + 1}"] = _fmt(None if self.eic.mask[k] else self.eic[k])
            out.append(row)
        return out


def _fmt(v) -> str:
    if v is None:
        return "NA"
    return f"{float(v):.10g}"


def write_report_csv(path: str | Path, reports: Sequence[MetricReport]) -> None:
    rows = [r for rep in reports for r in rep.rows()]
    if not rows:
        raise MetricError("no metric rows to write")
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="NA", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def quartile_summary(values: Sequence[float]) -> tuple[float, float, float]:
    """(mean, q1, q3) of the defined values; NaNs if there are none."""
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return (math.nan, math.nan, math.nan)
    return float(v.mean()), float(np.percentile(v, 25)), float(np.percentile(v, 75))


def write_plot_tsv(path: str | Path, groups: Mapping[float, Sequence[float]]) -> None:
    """Tab-separated ``x, mean, q1, q3`` rows for a plotting tool."""
    with open(path, "w") as fh:
        fh.write("x\tmean\tq1\tq3\n")
        for x in sorted(groups):
            m, q1, q3 = quartile_summary(groups[x])
            fh.write(f"{_fmt(x)}\t{_fmt(m)}\t{_fmt(q1)}\t{_fmt(q3)}\n")
