"""Deterministic signal primitives: buffers, resampling, framing, FFT, convolution, WAV I/O."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

log = logging.getLogger(__name__)

CANONICAL_RATE = 16000
DIRECT_CONV_MAX_TAPS = 256
# Kaiser beta for the polyphase anti-alias filter; ~90 dB stopband.
_RESAMPLE_WINDOW = ("kaiser", 9.0)


class SignalError(ValueError):
    """Raised when a buffer or frame violates an operation's preconditions."""


@dataclass(frozen=True)
class SampleBuffer:
    """Mono or stereo audio held as a (channels, n) float64 array.

    Channel 0 is the left ear for stereo buffers.
    """

    samples: np.ndarray
    rate: float

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2 or x.shape[0] not in (1, 2):
            raise SignalError(f"expected 1 or 2 channels, got array of shape {x.shape}")
        if not self.rate > 0:
            raise SignalError(f"sample rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(x)):
            bad = int(np.count_nonzero(~np.isfinite(x)))
            raise SignalError(f"buffer contains {bad} non-finite samples")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    @classmethod
    def stereo(cls, left, right, rate: float) -> SampleBuffer:
        left = np.asarray(left, dtype=np.float64)
        right = np.asarray(right, dtype=np.float64)
        if left.shape != right.shape:
            raise SignalError(f"channel lengths differ: {left.shape} vs {right.shape}")
        return cls(np.stack([left, right]), rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.rate

    @property
    def mono(self) -> np.ndarray:
        if self.channels != 1:
            raise SignalError("buffer is stereo; select a channel explicitly")
        return self.samples[0]

    @property
    def left(self) -> np.ndarray:
        return self.samples[0]

    @property
    def right(self) -> np.ndarray:
        return self.samples[-1]

    def channel(self, index: int) -> SampleBuffer:
        return SampleBuffer(self.samples[index], self.rate)


@dataclass(frozen=True)
class FrameSpec:
    frame_len: int
    hop: int
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise SignalError(f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")
        if self.window not in ("hann", "rect"):
            raise SignalError(f"unknown window {self.window!r}; use 'hann' or 'rect'")

    def coefficients(self) -> np.ndarray:
        if self.window == "rect":
            return np.ones(self.frame_len)
        # Periodic Hann: exact bin-centred tones leak into the two neighbouring bins only.
        return sps.windows.hann(self.frame_len, sym=False)


def resample(buf: SampleBuffer, target_rate: float) -> SampleBuffer:
    """Polyphase resampling to ``target_rate``.

    Identity when the rates already agree. The rate ratio is reduced to a
    rational ``up/down`` pair, so 44.1 kHz -> 16 kHz runs as 160/441.
    """
    if not target_rate > 0:
        raise SignalError(f"target rate must be positive, got {target_rate}")
    if target_rate == buf.rate:
        return buf
    ratio = Fraction(target_rate).limit_denominator(10000) / Fraction(buf.rate).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    out = sps.resample_poly(buf.samples, up, down, axis=1, window=_RESAMPLE_WINDOW)
    return SampleBuffer(out, target_rate)


def frame_count(length: int, frame_len: int, hop: int) -> int:
    if length < frame_len:
        return 0
    return (length - frame_len) // hop + 1


def frame_signal(buf: SampleBuffer | np.ndarray, spec: FrameSpec) -> np.ndarray:
    """Slice a mono signal into windowed frames of shape (T, frame_len).

    Frame ``t`` covers samples ``[t*hop, t*hop + frame_len)``. A signal
    shorter than one frame yields an empty (0, frame_len) array and a warning.
    """
    x = buf.mono if isinstance(buf, SampleBuffer) else np.asarray(buf, dtype=np.float64)
    if x.ndim != 1:
        raise SignalError("frame_signal expects a mono signal")
    n = frame_count(len(x), spec.frame_len, spec.hop)
    if n == 0:
        warnings.warn(
            f"signal of {len(x)} samples is shorter than one {spec.frame_len}-sample frame",
            stacklevel=2,
        )
        return np.zeros((0, spec.frame_len))
    idx = np.arange(n)[:, None] * spec.hop + np.arange(spec.frame_len)[None, :]
    return x[idx] * spec.coefficients()


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    x = np.asarray(x)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise SignalError(f"FFT length must be a power of two, got {n}")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    a = x[..., rev].astype(np.complex128)
    lead = a.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return a


def fft_magnitude(frame: np.ndarray) -> np.ndarray:
    """|DFT| of real frames for bins 0..n/2; works on (..., n) batches."""
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    if not _is_pow2(n):
        raise SignalError(f"FFT length must be a power of two, got {n}")
    return np.abs(fft_radix2(frame)[..., : n // 2 + 1])


def _convolve_same(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    if len(h) < DIRECT_CONV_MAX_TAPS:
        full = np.convolve(x, h)
    else:
        full = sps.oaconvolve(x, h)
    return full[: len(x)]


def convolve(sig: SampleBuffer, kernel) -> SampleBuffer:
    """Linear convolution with the output truncated to the input length.

    Kernel index 0 is the zero-delay tap, so ``[0, 1]`` delays by one sample.
    Short kernels run directly in the time domain, long ones (room responses)
    via FFT overlap-add.
    """
    h = np.asarray(kernel, dtype=np.float64).ravel()
    if h.size == 0:
        raise SignalError("convolution kernel is empty")
    if not np.all(np.isfinite(h)):
        raise SignalError("convolution kernel contains non-finite taps")
    out = np.stack([_convolve_same(ch, h) for ch in sig.samples])
    return SampleBuffer(out, sig.rate)


def read_wav(path: str | Path) -> SampleBuffer:
    """Read a PCM16 or 32-bit float WAV file into a SampleBuffer in [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError) as exc:
        raise SignalError(f"cannot read WAV {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise SignalError(f"{path}: unsupported sample format {data.dtype}; need PCM16 or float32")
    if x.ndim == 2:
        if x.shape[1] > 2:
            raise SignalError(f"{path}: {x.shape[1]} channels; only mono/stereo supported")
        x = x.T
    return SampleBuffer(x, float(rate))


def write_wav(path: str | Path, buf: SampleBuffer, fmt: str = "float32") -> None:
    rate = int(round(buf.rate))
    if rate != buf.rate:
        raise SignalError(f"WAV needs an integer sample rate, got {buf.rate}")
    x = buf.samples.T if buf.channels == 2 else buf.samples[0]
    if fmt == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise SignalError(f"unknown WAV format {fmt!r}; use 'pcm16' or 'float32'")
    wavfile.write(str(path), rate, data)
