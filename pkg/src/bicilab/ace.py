"""ACE sound coding: FFT band envelopes, N-of-M maxima selection, LGF, current mapping.

Channel index 0 is the most apical electrode (lowest analysis band); the
stimulation order within a cycle runs base-to-apex, i.e. from the highest
channel index down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import CANONICAL_RATE, FrameSpec, SampleBuffer, SignalError, fft_magnitude, frame_signal

FFT_LEN = 128
FIRST_BIN = 2

# Bins per channel, apex (low frequency) first; bands are contiguous from FIRST_BIN.
BAND_WIDTHS = {
    22: (1,) * 10 + (2,) * 4 + (3, 3, 4, 4, 5, 6, 7, 8),
    20: (1,) * 8 + (2,) * 4 + (3, 3, 4, 4, 5, 6, 8, 9),
}


class AceError(ValueError):
    pass


@dataclass(frozen=True)
class BandTable:
    """Contiguous groups of FFT bins, one group per channel."""

    widths: tuple[int, ...]
    first_bin: int = FIRST_BIN
    fft_len: int = FFT_LEN

    def __post_init__(self):
        if not self.widths or min(self.widths) < 1:
            raise AceError("band widths must be positive")
        if self.first_bin < 0 or self.first_bin + sum(self.widths) > self.fft_len // 2 + 1:
            raise AceError("band table exceeds the one-sided spectrum")

    @classmethod
    def for_channels(cls, m_channels: int) -> BandTable:
        if m_channels not in BAND_WIDTHS:
            raise AceError(f"no band table for M={m_channels}; supported values are {sorted(BAND_WIDTHS)}")
        return cls(BAND_WIDTHS[m_channels])

    @classmethod
    def uniform(cls, m_channels: int, first_bin: int = FIRST_BIN, last_bin: int = 59) -> BandTable:
        """Split bins ``first_bin..last_bin`` into M near-equal groups (reduced toy models)."""
        total = last_bin - first_bin + 1
        if not 1 <= m_channels <= total:
            raise AceError(f"cannot split {total} bins into {m_channels} bands")
        base, extra = divmod(total, m_channels)
        return cls(tuple(base + (1 if k >= m_channels - extra else 0) for k in range(m_channels)), first_bin)

    @property
    def m_channels(self) -> int:
        return len(self.widths)

    @property
    def bin_ranges(self) -> list[tuple[int, int]]:
        """Half-open ``[lo, hi)`` bin ranges per channel."""
        starts = self.first_bin + np.concatenate([[0], np.cumsum(self.widths)[:-1]])
        return [(int(s), int(s + w)) for s, w in zip(starts, self.widths)]

    def band_of_frequency(self, freq_hz: float, rate: float = CANONICAL_RATE) -> int | None:
        b = int(round(freq_hz * self.fft_len / rate))
        for k, (lo, hi) in enumerate(self.bin_ranges):
            if lo <= b < hi:
                return k
        return None


@dataclass(frozen=True)
class LgfParams:
    base_level: float = 4 / 256
    saturation_level: float = 150 / 256
    rho: float = 416.2

    def __post_init__(self):
        if not (self.saturation_level > self.base_level > 0 and self.rho > 0):
            raise AceError(
                f"invalid LGF parameters: need sat > base > 0 and rho > 0, got "
                f"base={self.base_level}, sat={self.saturation_level}, rho={self.rho}"
            )


@dataclass(frozen=True)
class PatientMap:
    thresholds: np.ndarray
    comforts: np.ndarray
    n_select: int = 8
    csr: float = 1000.0

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        c = np.asarray(self.comforts, dtype=np.float64)
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "comforts", c)
        if t.shape != c.shape or t.ndim != 1:
            raise AceError("thresholds and comforts must be equal-length vectors")
        if np.any(c < t):
            raise AceError("comfort level below threshold on at least one electrode")
        if not 1 <= self.n_select <= len(t):
            raise AceError(f"need 1 <= N <= M, got N={self.n_select}, M={len(t)}")
        if not self.csr > 0:
            raise AceError("channel stimulation rate must be positive")

    @classmethod
    def default(cls, m_channels: int = 22, n_select: int = 8, csr: float = 1000.0,
                threshold: float = 100, comfort: float = 200) -> PatientMap:
        return cls(np.full(m_channels, threshold), np.full(m_channels, comfort), n_select, csr)

    @property
    def m_channels(self) -> int:
        return len(self.thresholds)


@dataclass(frozen=True)
class Electrodogram:
    """M x T normalised stimulation amplitudes."""

    amplitudes: np.ndarray
    csr: float
    side: str = "mono"

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.float64)
        if a.ndim != 2:
            raise AceError(f"electrodogram must be M x T, got shape {a.shape}")
        if a.size and (np.nanmin(a) < 0 or np.nanmax(a) > 1 or not np.all(np.isfinite(a))):
            raise AceError("electrodogram amplitudes must lie in [0, 1]")
        if self.side not in ("left", "right", "mono"):
            raise AceError(f"side must be left/right/mono, got {self.side!r}")
        object.__setattr__(self, "amplitudes", a)

    @property
    def m_channels(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def frames(self) -> int:
        return self.amplitudes.shape[1]


@dataclass(frozen=True)
class CurrentFrame:
    levels: np.ndarray
    active_set: tuple[int, ...] = field(default=())


@dataclass(frozen=True)
class AceResult:
    """Intermediate products of one ACE pass, kept for training targets."""

    envelopes: np.ndarray
    mask: np.ndarray
    electrodogram: Electrodogram


def analysis_gain(fft_len: int = FFT_LEN) -> float:
    # A unit sinusoid centred on a bin yields an envelope of 1.0 under the Hann window.
    return 2.0 / np.sum(FrameSpec(fft_len, 1, "hann").coefficients())


def band_envelopes(frames: np.ndarray, m_channels: int | BandTable = 22) -> np.ndarray:
    """Root-sum-square of bin magnitudes per band; frames (T, 128) -> envelopes (M, T)."""
    table = m_channels if isinstance(m_channels, BandTable) else BandTable.for_channels(m_channels)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != table.fft_len:
        raise AceError(f"expected frames of shape (T, {table.fft_len}), got {frames.shape}")
    mag = fft_magnitude(frames) * analysis_gain(table.fft_len)
    power = mag**2
    env = np.stack([np.sqrt(power[:, lo:hi].sum(axis=1)) for lo, hi in table.bin_ranges])
    return env


def select_n_of_m(envelopes: np.ndarray, n: int) -> np.ndarray:
    """0/1 mask of the ``n`` largest positive envelopes per frame.

    Works on an M-vector or an (M, T) matrix. Ties go to the lower channel index.
    """
    e = np.asarray(envelopes, dtype=np.float64)
    squeeze = e.ndim == 1
    if squeeze:
        e = e[:, None]
    m = e.shape[0]
    if not 0 <= n <= m:
        raise AceError(f"cannot select {n} of {m} channels")
    order = np.argsort(-e, axis=0, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(m)[:, None].repeat(e.shape[1], axis=1), axis=0)
    mask = ((rank < n) & (e > 0)).astype(np.float64)
    return mask[:, 0] if squeeze else mask


def lgf_compress(e, params: LgfParams = LgfParams()):
    """Loudness growth function mapping envelope amplitude to p in [0, 1]."""
    e = np.asarray(e, dtype=np.float64)
    if np.any(e < 0):
        raise AceError("envelope values must be non-negative")
    base, sat, rho = params.base_level, params.saturation_level, params.rho
    u = np.clip((e - base) / (sat - base), 0.0, 1.0)
    p = np.log1p(rho * u) / math.log1p(rho)
    return float(p) if p.ndim == 0 else p


def map_to_current(p_frame, mask, pmap: PatientMap) -> CurrentFrame:
    """Place selected p values in each electrode's [threshold, comfort] range."""
    p = np.asarray(p_frame, dtype=np.float64)
    mask = np.asarray(mask)
    if p.shape != (pmap.m_channels,) or mask.shape != p.shape:
        raise AceError(
            f"patient map has {pmap.m_channels} electrodes but frame has {p.shape[0] if p.ndim else 0}"
        )
    sel = mask > 0
    raw = pmap.thresholds + p * (pmap.comforts - pmap.thresholds)
    levels = np.where(sel, np.floor(raw + 0.5), 0).astype(np.int64)
    active = tuple(int(k) for k in np.flatnonzero(sel)[::-1])
    return CurrentFrame(levels, active)


def ace_analyse(buf: SampleBuffer, pmap: PatientMap, lgf: LgfParams = LgfParams(),
                table: BandTable | None = None, side: str = "mono") -> AceResult:
    """Run the ACE chain and keep envelopes and selection masks alongside p."""
    if buf.channels != 1:
        raise AceError("ACE encodes one ear at a time; pass a mono buffer")
    if buf.rate != CANONICAL_RATE:
        raise AceError(f"ACE expects {CANONICAL_RATE} Hz input, got {buf.rate}; resample first")
    hop_f = buf.rate / pmap.csr
    if hop_f != int(hop_f):
        raise AceError(f"CSR {pmap.csr} does not divide the sample rate {buf.rate}")
    hop = int(hop_f)
    if hop > FFT_LEN:
        raise AceError(f"CSR {pmap.csr} too low: hop of {hop} exceeds the {FFT_LEN}-point frame")
    table = table or BandTable.for_channels(pmap.m_channels)
    if table.m_channels != pmap.m_channels:
        raise AceError(f"band table has {table.m_channels} channels, patient map {pmap.m_channels}")

    # Causal buffering: frame t ends at sample (t + 1) * hop, so T = floor(len / hop).
    x = np.concatenate([np.zeros(FFT_LEN - hop), buf.mono])
    n_frames = len(buf) // hop
    if n_frames == 0:
        env = np.zeros((table.m_channels, 0))
    else:
        frames = frame_signal(x[: (n_frames - 1) * hop + FFT_LEN], FrameSpec(FFT_LEN, hop, "hann"))
        env = band_envelopes(frames, table)
    mask = select_n_of_m(env, pmap.n_select)
    p = lgf_compress(env, lgf) * mask
    return AceResult(env, mask, Electrodogram(p, pmap.csr, side))


def ace_encode(buf: SampleBuffer, pmap: PatientMap, lgf: LgfParams = LgfParams(),
               table: BandTable | None = None, side: str = "mono"):
    """Encode a mono 16 kHz signal; returns (Electrodogram, list of CurrentFrame)."""
    res = ace_analyse(buf, pmap, lgf, table, side)
    p = res.electrodogram.amplitudes
    currents = [map_to_current(p[:, t], res.mask[:, t], pmap) for t in range(p.shape[1])]
    return res.electrodogram, currents


_SIDE_CODES = {"left": "l", "right": "r", "mono": "m"}
_CODE_SIDES = {v: k for k, v in _SIDE_CODES.items()}


def _fmt_number(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def egf_dumps(egram: Electrodogram) -> str:
    m, t = egram.amplitudes.shape
    lines = [f"EGF1 m={m} csr={_fmt_number(egram.csr)} side={_SIDE_CODES[egram.side]} frames={t}"]
    for col in egram.amplitudes.T:
        lines.append(",".join(f"{v:.9g}" for v in col))
    return "\n".join(lines) + "\n"


def egf_loads(text: str) -> Electrodogram:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("EGF1 "):
        raise AceError("not an EGF v1 file (missing 'EGF1' header)")
    try:
        fields = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
        m, t = int(fields["m"]), int(fields["frames"])
        csr, side = float(fields["csr"]), _CODE_SIDES[fields["side"]]
    except (KeyError, ValueError) as exc:
        raise AceError(f"malformed EGF header: {lines[0]!r}") from exc
    body = lines[1:]
    if len(body) != t:
        raise AceError(f"EGF header promises {t} frames, file holds {len(body)}")
    amps = np.zeros((m, t))
    for i, line in enumerate(body):
        vals = line.split(",")
        if len(vals) != m:
            raise AceError(f"EGF frame {i} has {len(vals)} values, expected {m}")
        amps[:, i] = [float(v) for v in vals]
    return Electrodogram(amps, csr, side)


def write_egf(path: str | Path, egram: Electrodogram) -> None:
    Path(path).write_text(egf_dumps(egram), encoding="utf-8")


def read_egf(path: str | Path) -> Electrodogram:
    return egf_loads(Path(path).read_text(encoding="utf-8"))
