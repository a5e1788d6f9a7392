"""Audio sources for scenes: WAV directories or seeded synthetic stand-ins.

The synthetic generators exist so that tests and desk-scale experiments run
without third-party speech/noise corpora. They are crude, but they have the
properties the metrics care about: harmonic structure with a moving pitch,
syllable-rate envelope modulation with pauses, and a low-pass noise spectrum.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .dsp import CANONICAL_RATE, SampleBuffer, SignalError, read_wav, resample

log = logging.getLogger(__name__)

_FORMANTS = ((500.0, 80.0), (1500.0, 120.0), (2500.0, 160.0))


def synthetic_speech(rng: np.random.Generator, seconds: float = 1.0, rate: int = CANONICAL_RATE,
                     level_rms: float = 0.05) -> SampleBuffer:
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    f0 = rng.uniform(100, 220) * (1 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    # formant shifts per utterance keep scenes spectrally distinct
    shift = rng.uniform(0.8, 1.25)
    x = np.zeros(n)
    for h in range(1, int(rate / 2 / 100)):
        fh = h * f0
        amp = sum(np.exp(-0.5 * ((fh - fc * shift) / bw) ** 2) for fc, bw in _FORMANTS) + 0.02
        amp = np.where(fh < rate / 2 - 200, amp, 0.0)
        x += amp * np.sin(h * phase)
    syll = rng.uniform(3, 5)
    env = np.clip(np.sin(2 * np.pi * syll * t + rng.uniform(0, 2 * np.pi)), 0, None) ** 0.7
    x *= env
    x *= level_rms / max(np.sqrt(np.mean(x**2)), 1e-12)
    return SampleBuffer(x, rate)


def speech_shaped_noise(rng: np.random.Generator, seconds: float = 1.0, rate: int = CANONICAL_RATE,
                        level_rms: float = 0.05) -> SampleBuffer:
    n = int(round(seconds * rate))
    w = rng.standard_normal(n + 2048)
    b, a = sps.butter(1, 800, "lowpass", fs=rate)
    hp_b, hp_a = sps.butter(2, 100, "highpass", fs=rate)
    x = sps.lfilter(hp_b, hp_a, sps.lfilter(b, a, w) + 0.1 * w)[2048:]
    x *= level_rms / np.sqrt(np.mean(x**2))
    return SampleBuffer(x, rate)


def tone_complex(freqs, amplitudes, seconds: float = 1.0, rate: int = CANONICAL_RATE,
                 phases=None) -> SampleBuffer:
    """Sum of steady sinusoids; a stationary target with a known spectrum."""
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    phases = np.zeros(len(freqs)) if phases is None else phases
    x = np.zeros(n)
    for f, a, ph in zip(freqs, amplitudes, phases):
        x += a * np.sin(2 * np.pi * f * t + ph)
    return SampleBuffer(x, rate)


def load_mono_16k(path: str | Path) -> SampleBuffer:
    buf = read_wav(path)
    if buf.channels == 2:
        buf = SampleBuffer(0.5 * (buf.left + buf.right), buf.rate)
    return resample(buf, CANONICAL_RATE)


def load_directory(path: str | Path) -> list[SampleBuffer]:
    """Every *.wav under ``path`` (sorted), as mono 16 kHz buffers."""
    root = Path(path)
    if not root.is_dir():
        raise SignalError(f"corpus directory {root} does not exist")
    files = sorted(root.rglob("*.wav"))
    if not files:
        raise SignalError(f"corpus directory {root} holds no .wav files")
    out = []
    for f in files:
        out.append(load_mono_16k(f))
        log.debug("loaded %s (%.2f s)", f, out[-1].duration)
    return out
