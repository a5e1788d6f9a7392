"""Binaural scene synthesis: spatial rendering, better-ear SNR mixing, clean references."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .ace import AceResult, BandTable, Electrodogram, LgfParams, PatientMap, ace_analyse
from .dsp import CANONICAL_RATE, SampleBuffer, convolve

HEAD_RADIUS_M = 0.0875
SPEED_OF_SOUND = 343.0
ILD_MAX_DB = 6.0
SNR_RANGE_DB = (-5.0, 10.0)
AZIMUTH_GRID = np.arange(-90, 91, 5)
_FD_HALF_TAPS = 32


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class BrirRenderer:
    """Stereo impulse responses for the target and noise source positions."""

    target: SampleBuffer
    noise: SampleBuffer


Renderer = Union[str, BrirRenderer]


@dataclass(frozen=True)
class SceneSpec:
    target: SampleBuffer
    noise: SampleBuffer
    target_azimuth: float = 0.0
    noise_azimuth: float = 0.0
    snr_db: float = 0.0
    renderer: Renderer = "parametric"

    def __post_init__(self):
        for name, buf in (("target", self.target), ("noise", self.noise)):
            if buf.channels != 1:
                raise SceneError(f"{name} source must be mono")
            if buf.rate != CANONICAL_RATE:
                raise SceneError(f"{name} source must be at {CANONICAL_RATE} Hz, got {buf.rate}")
        for az in (self.target_azimuth, self.noise_azimuth):
            _check_azimuth(az)
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise SceneError(f"invalid SNR {self.snr_db}")
        if isinstance(self.renderer, str) and self.renderer != "parametric":
            raise SceneError(f"unknown renderer {self.renderer!r}")


@dataclass(frozen=True)
class BinauralPair:
    """Noisy ear signals with the target-only renders and the scaled noise that built them."""

    left: np.ndarray
    right: np.ndarray
    clean_left: np.ndarray
    clean_right: np.ndarray
    noise_left: np.ndarray
    noise_right: np.ndarray
    noise_gain: float
    rate: float = CANONICAL_RATE

    def __post_init__(self):
        n = len(self.left)
        if any(len(a) != n for a in (self.right, self.clean_left, self.clean_right)):
            raise SceneError("binaural pair channels differ in length")

    @property
    def noisy(self) -> SampleBuffer:
        return SampleBuffer.stereo(self.left, self.right, self.rate)

    @property
    def clean(self) -> SampleBuffer:
        return SampleBuffer.stereo(self.clean_left, self.clean_right, self.rate)


def _check_azimuth(az: float) -> None:
    if not -90.0 <= az <= 90.0:
        raise SceneError(f"azimuth {az} outside [-90, 90] degrees")


def woodworth_itd(azimuth_deg: float) -> float:
    """Interaural time difference in seconds for a rigid spherical head."""
    th = math.radians(abs(azimuth_deg))
    return HEAD_RADIUS_M / SPEED_OF_SOUND * (th + math.sin(th))


def fractional_delay(x: np.ndarray, delay: float) -> np.ndarray:
    """Delay by a possibly non-integer number of samples (windowed sinc, zero history)."""
    if delay < 0:
        raise SceneError("delay must be non-negative")
    whole = int(math.floor(delay))
    frac = delay - whole
    if frac == 0.0:
        out = np.zeros_like(x)
        if whole < len(x):
            out[whole:] = x[: len(x) - whole]
        return out
    k = np.arange(whole - _FD_HALF_TAPS + 1, whole + _FD_HALF_TAPS + 1)
    u = k - delay
    h = np.sinc(u) * np.kaiser(len(k), 8.0)
    h /= h.sum()
    full = np.convolve(x, h)
    # full[j] corresponds to output sample j + k[0]
    out = np.zeros_like(x)
    lo = max(0, k[0])
    out[lo:] = full[lo - k[0]: lo - k[0] + len(x) - lo]
    return out


def render_parametric(src: SampleBuffer, azimuth: float) -> tuple[np.ndarray, np.ndarray]:
    """Spherical-head rendering: Woodworth ITD and a 6*sin(theta) dB ILD on the far ear.

    Positive azimuths lie to the listener's right, so the left ear is the far ear.
    """
    _check_azimuth(azimuth)
    x = src.mono
    if azimuth == 0:
        return x.copy(), x.copy()
    th = math.radians(abs(azimuth))
    gain = 10 ** (-ILD_MAX_DB * math.sin(th) / 20)
    far = gain * fractional_delay(x, woodworth_itd(azimuth) * src.rate)
    near = x.copy()
    return (far, near) if azimuth > 0 else (near, far)


def render_brir(src: SampleBuffer, brir: SampleBuffer) -> tuple[np.ndarray, np.ndarray]:
    if brir.channels != 2:
        raise SceneError("BRIR must be stereo")
    if brir.rate != src.rate:
        raise SceneError(f"BRIR rate {brir.rate} differs from source rate {src.rate}")
    return convolve(src, brir.left).mono, convolve(src, brir.right).mono


def _pad_to(a: np.ndarray, n: int) -> np.ndarray:
    return np.pad(a, (0, n - len(a))) if len(a) < n else a


def _power(a: np.ndarray) -> float:
    return float(np.mean(a * a))


def ear_snrs(target: tuple[np.ndarray, np.ndarray], noise: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    return np.array([10 * math.log10(_power(t) / _power(n)) for t, n in zip(target, noise)])


def mix_at_snr(target: tuple[np.ndarray, np.ndarray], noise: tuple[np.ndarray, np.ndarray],
               snr_db: float, rate: float = CANONICAL_RATE) -> BinauralPair:
    """Scale the noise by one gain so that the better ear sits at ``snr_db``.

    The target is left untouched. ``snr_db = inf`` mixes in no noise at all.
    """
    n = max(len(a) for a in (*target, *noise))
    tl, tr = (_pad_to(np.asarray(a, dtype=np.float64), n) for a in target)
    nl, nr = (_pad_to(np.asarray(a, dtype=np.float64), n) for a in noise)
    if min(_power(tl), _power(tr)) == 0:
        raise SceneError("target has zero power in at least one ear")
    if min(_power(nl), _power(nr)) == 0:
        raise SceneError("noise has zero power in at least one ear")
    if snr_db == math.inf:
        g = 0.0
    else:
        better = float(np.max(ear_snrs((tl, tr), (nl, nr))))
        g = 10 ** ((better - snr_db) / 20)
    sl, sr = g * nl, g * nr
    return BinauralPair(tl + sl, tr + sr, tl, tr, sl, sr, g, rate)


def render(src: SampleBuffer, azimuth: float, renderer: Renderer, which: str):
    if isinstance(renderer, BrirRenderer):
        return render_brir(src, getattr(renderer, which))
    return render_parametric(src, azimuth)


def build_pair(spec: SceneSpec) -> BinauralPair:
    """Render both sources and mix them; no electrodograms."""
    n = len(spec.target)
    noise = spec.noise.mono
    if len(noise) < n:
        noise = np.resize(noise, n)  # loop short noise recordings
    noise = SampleBuffer(noise[:n], spec.noise.rate)
    tgt = render(spec.target, spec.target_azimuth, spec.renderer, "target")
    nse = render(noise, spec.noise_azimuth, spec.renderer, "noise")
    return mix_at_snr(tgt, nse, spec.snr_db, spec.target.rate)


def encode_ears(left: np.ndarray, right: np.ndarray, pmap: PatientMap, lgf: LgfParams = LgfParams(),
                table: BandTable | None = None, rate: float = CANONICAL_RATE) -> tuple[AceResult, AceResult]:
    return (
        ace_analyse(SampleBuffer(left, rate), pmap, lgf, table, "left"),
        ace_analyse(SampleBuffer(right, rate), pmap, lgf, table, "right"),
    )


def build_scene(spec: SceneSpec, pmap: PatientMap, lgf: LgfParams = LgfParams(),
                table: BandTable | None = None) -> tuple[BinauralPair, tuple[Electrodogram, Electrodogram]]:
    """Render, mix and ACE-encode the clean ear signals (the reference electrodograms)."""
    pair = build_pair(spec)
    cl, cr = encode_ears(pair.clean_left, pair.clean_right, pmap, lgf, table, pair.rate)
    return pair, (cl.electrodogram, cr.electrodogram)


def draw_snr(rng: np.random.Generator, lo: float = SNR_RANGE_DB[0], hi: float = SNR_RANGE_DB[1]) -> float:
    return float(rng.uniform(lo, hi))


def scene_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent per-scene generators split from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def random_segment(buf: SampleBuffer, n: int, rng: np.random.Generator) -> SampleBuffer:
    x = buf.mono
    if len(x) <= n:
        return SampleBuffer(np.resize(x, n), buf.rate)
    start = int(rng.integers(0, len(x) - n + 1))
    return SampleBuffer(x[start:start + n], buf.rate)

