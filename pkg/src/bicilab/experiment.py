"""Experiment definitions: the declarative config file, scene grids and evaluation jobs.

A config is an INI-style file with ``key = value`` lines::

    [run]
    seed = 7
    out = results

    [corpus]
    target = synthetic          ; or a directory of WAV files
    noise = synthetic

    [scenes]
    seconds = 1.0
    renderer = parametric       ; or brir:/path/to/brir_{az}.wav
    train_count = 8
    snr_range = -5, 10
    eval_snrs = -5, 0, 5, 10
    azimuths = -90:90:5
    target_azimuth = 0
    eval_repeats = 1

    [map]
    m_channels = 22
    n_select = 8
    csr = 1000
    threshold = 100
    comfort = 200
    band_table = standard       ; or uniform

    [lgf]
    base_level = 0.015625
    saturation_level = 0.5859375
    rho = 416.2

    [model]
    variant = fused             ; plus any ModelConfig field, e.g. stride = 16

    [train]
    max_epochs = 100
    lr = 0.001
    batch_size = 2
    val_fraction = 0.25
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .ace import AceError, BandTable, LgfParams, PatientMap
from .corpus import load_directory, speech_shaped_noise, synthetic_speech
from .dsp import CANONICAL_RATE, SampleBuffer, SignalError, read_wav
from .metrics import MetricReport
from .model import ModelConfig, denoised_electrodogram, forward
from .model.training import TrainConfig, TrainingExample
from .scene import (
    AZIMUTH_GRID,
    SNR_RANGE_DB,
    BrirRenderer,
    SceneError,
    SceneSpec,
    build_pair,
    draw_snr,
    encode_ears,
    random_segment,
    scene_rngs,
)

log = logging.getLogger(__name__)

SYNTHETIC = "synthetic"
UNPROCESSED = "unprocessed"


class ConfigError(ValueError):
    """Bad or inconsistent experiment configuration (CLI exit code 1)."""


@dataclass(frozen=True)
class ExperimentConfig:
    target_source: str = SYNTHETIC
    noise_source: str = SYNTHETIC
    renderer: str = "parametric"
    seconds: float = 1.0
    train_count: int = 8
    snr_range: tuple[float, float] = SNR_RANGE_DB
    eval_snrs: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0)
    azimuths: tuple[float, ...] = tuple(float(a) for a in AZIMUTH_GRID)
    target_azimuth: float = 0.0
    eval_repeats: int = 1
    pmap: PatientMap = field(default_factory=PatientMap.default)
    band_table: str = "standard"
    lgf: LgfParams = field(default_factory=LgfParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    variant: str = "fused"
    train: TrainConfig = field(default_factory=TrainConfig)
    val_fraction: float = 0.25
    seed: int = 0
    out: Path = Path("out")

    def table(self) -> BandTable:
        if self.band_table == "uniform":
            return BandTable.uniform(self.pmap.m_channels)
        return BandTable.for_channels(self.pmap.m_channels)

    def check_model(self, config: ModelConfig) -> None:
        """Reject weights whose electrode count or frame rate differ from the patient map."""
        if config.m_channels != self.pmap.m_channels:
            raise ConfigError(f"model has {config.m_channels} outputs but the map has {self.pmap.m_channels} electrodes")
        if config.frame_rate(CANONICAL_RATE) != self.pmap.csr:
            raise ConfigError(
                f"model frame rate {config.frame_rate(CANONICAL_RATE):g}/s does not match CSR {self.pmap.csr:g}"
            )


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _grid(raw: str) -> tuple[float, ...]:
    """``lo:hi:step`` (inclusive) or an explicit list."""
    if ":" in raw:
        lo, hi, step = (float(v) for v in raw.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        return tuple(float(v) for v in np.arange(lo, hi + step / 2, step))
    return _floats(raw)


def load_config(path: str | Path | None = None, seed: int | None = None, out: str | Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    try:
        cfg = _from_parser(cp)
    except (ValueError, AceError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if seed is not None:
        cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
    if out is not None:
        cfg = replace(cfg, out=Path(out))
    return cfg


def _from_parser(cp: configparser.ConfigParser) -> ExperimentConfig:
    kw: dict = {}
    run = cp["run"] if "run" in cp else {}
    seed = int(run.get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    kw["seed"] = seed
    if "out" in run:
        kw["out"] = Path(run["out"])

    corpus = cp["corpus"] if "corpus" in cp else {}
    for key, name in (("target", "target_source"), ("noise", "noise_source")):
        src = corpus.get(key, SYNTHETIC).strip()
        if src != SYNTHETIC and not Path(src).is_dir():
            raise ConfigError(f"{key} corpus directory {src} does not exist")
        kw[name] = src

    sc = cp["scenes"] if "scenes" in cp else {}
    kw["renderer"] = sc.get("renderer", "parametric").strip()
    if kw["renderer"] != "parametric" and not kw["renderer"].startswith("brir:"):
        raise ConfigError(f"renderer must be 'parametric' or 'brir:<path template>', got {kw['renderer']!r}")
    kw["seconds"] = float(sc.get("seconds", 1.0))
    kw["train_count"] = int(sc.get("train_count", 8))
    if "snr_range" in sc:
        lo, hi = _floats(sc["snr_range"])
        kw["snr_range"] = (lo, hi)
    if "eval_snrs" in sc:
        kw["eval_snrs"] = _floats(sc["eval_snrs"])
    if "azimuths" in sc:
        kw["azimuths"] = _grid(sc["azimuths"])
    kw["target_azimuth"] = float(sc.get("target_azimuth", 0.0))
    kw["eval_repeats"] = int(sc.get("eval_repeats", 1))
    if not kw.get("eval_snrs", (0,)) or not kw.get("azimuths", (0,)):
        raise ConfigError("SNR and azimuth grids must be non-empty")
    if kw["seconds"] <= 0 or kw["train_count"] < 1 or kw["eval_repeats"] < 1:
        raise ConfigError("scene duration and counts must be positive")

    mp = cp["map"] if "map" in cp else {}
    m = int(mp.get("m_channels", 22))
    kw["pmap"] = PatientMap.default(m, int(mp.get("n_select", 8)), float(mp.get("csr", 1000)),
                                    float(mp.get("threshold", 100)), float(mp.get("comfort", 200)))
    kw["band_table"] = mp.get("band_table", "standard").strip()
    if kw["band_table"] not in ("standard", "uniform"):
        raise ConfigError("band_table must be 'standard' or 'uniform'")

    if "lgf" in cp:
        lg = cp["lgf"]
        base = LgfParams()
        kw["lgf"] = LgfParams(float(lg.get("base_level", base.base_level)),
                              float(lg.get("saturation_level", base.saturation_level)),
                              float(lg.get("rho", base.rho)))

    if "model" in cp:
        section = dict(cp["model"])
        section.setdefault("m_channels", str(m))
        model, variant = ModelConfig.from_mapping(section)
        kw["model"] = model
        if variant is not None:
            kw["variant"] = variant
    else:
        kw["model"] = ModelConfig().with_channels(m)

    tr = cp["train"] if "train" in cp else {}
    max_steps = tr.get("max_steps")
    kw["train"] = TrainConfig(max_epochs=int(tr.get("max_epochs", 100)), lr=float(tr.get("lr", 1e-3)),
                              batch_size=int(tr.get("batch_size", 2)),
                              max_steps=int(max_steps) if max_steps else None, seed=seed)
    kw["val_fraction"] = float(tr.get("val_fraction", 0.25))
    if not 0 < kw["val_fraction"] < 1:
        raise ConfigError("val_fraction must lie strictly between 0 and 1")
    cfg = ExperimentConfig(**kw)
    cfg.table()  # fail early on unsupported electrode counts
    return cfg


# -- scenes --------------------------------------------------------------------

def load_brir(template: str, azimuth: float) -> SampleBuffer:
    """Read the stereo BRIR for ``azimuth`` from a ``brir:`` path template containing ``{az}``."""
    path = Path(template[len("brir:"):].format(az=int(round(azimuth))))
    buf = read_wav(path)
    if buf.channels != 2:
        raise SceneError(f"BRIR {path} must be stereo")
    return buf


@dataclass
class SourcePool:
    """Target and noise sources, either loaded WAVs or seeded synthetic generators."""

    targets: list[SampleBuffer] | None
    noises: list[SampleBuffer] | None

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> SourcePool:
        def load(src):
            if src == SYNTHETIC:
                return None
            try:
                return load_directory(src)
            except SignalError as exc:
                raise ConfigError(f"corpus {src}: {exc}") from exc
        return cls(load(cfg.target_source), load(cfg.noise_source))

    def draw(self, rng: np.random.Generator, seconds: float) -> tuple[SampleBuffer, SampleBuffer]:
        n = int(round(seconds * CANONICAL_RATE))
        if self.targets is None:
            target = synthetic_speech(rng, seconds)
        else:
            target = random_segment(self.targets[rng.integers(len(self.targets))], n, rng)
        if self.noises is None:
            noise = speech_shaped_noise(rng, seconds)
        else:
            noise = random_segment(self.noises[rng.integers(len(self.noises))], n, rng)
        return target, noise


def scene_spec(cfg: ExperimentConfig, target: SampleBuffer, noise: SampleBuffer, target_az: float,
               noise_az: float, snr_db: float) -> SceneSpec:
    if cfg.renderer == "parametric":
        renderer = "parametric"
    else:
        renderer = BrirRenderer(load_brir(cfg.renderer, target_az), load_brir(cfg.renderer, noise_az))
    return SceneSpec(target, noise, target_az, noise_az, snr_db, renderer)


def training_examples(cfg: ExperimentConfig, pool: SourcePool | None = None) -> list[TrainingExample]:
    pool = pool or SourcePool.from_config(cfg)
    table = cfg.table()
    out = []
    for rng in scene_rngs(cfg.seed, cfg.train_count):
        target, noise = pool.draw(rng, cfg.seconds)
        t_az, n_az = (float(a) for a in rng.choice(cfg.azimuths, 2))
        spec = scene_spec(cfg, target, noise, t_az, n_az, draw_snr(rng, *cfg.snr_range))
        out.append(TrainingExample.from_pair(build_pair(spec), cfg.pmap, cfg.lgf, table))
    return out


def split_train_val(examples: Sequence, val_fraction: float) -> tuple[list, list]:
    n_val = max(1, int(round(len(examples) * val_fraction)))
    if len(examples) - n_val < 1:
        raise ConfigError(f"{len(examples)} scenes cannot be split into training and validation sets")
    return list(examples[n_val:]), list(examples[:n_val])


@dataclass(frozen=True)
class EvalJob:
    index: int
    snr_db: float
    noise_azimuth: float
    repeat: int


def eval_jobs(cfg: ExperimentConfig) -> list[EvalJob]:
    jobs = []
    for snr in cfg.eval_snrs:
        for az in cfg.azimuths:
            for k in range(cfg.eval_repeats):
                jobs.append(EvalJob(len(jobs), snr, az, k))
    return jobs


def _trim(*arrays: np.ndarray) -> list[np.ndarray]:
    t = min(a.shape[-1] for a in arrays)
    return [a[..., :t] for a in arrays]


def evaluate_scene(cfg: ExperimentConfig, models: dict, job: EvalJob, rng: np.random.Generator,
                   pool: SourcePool) -> list[MetricReport]:
    """Metrics for the unprocessed ACE baseline and each model on one scene.

    ``models`` maps variant name -> (params, ModelConfig).
    """
    target, noise = pool.draw(rng, cfg.seconds)
    spec = scene_spec(cfg, target, noise, cfg.target_azimuth, job.noise_azimuth, job.snr_db)
    pair = build_pair(spec)
    table = cfg.table()
    clean = encode_ears(pair.clean_left, pair.clean_right, cfg.pmap, cfg.lgf, table, pair.rate)
    noisy = encode_ears(pair.left, pair.right, cfg.pmap, cfg.lgf, table, pair.rate)
    clean_p = [r.electrodogram.amplitudes for r in clean]
    noisy_p = [r.electrodogram.amplitudes for r in noisy]
    processed = {UNPROCESSED: noisy_p}
    for variant, (params, mcfg) in models.items():
        pl, pr = forward(variant, pair.left, pair.right, params, mcfg)
        processed[variant] = [denoised_electrodogram(pl, cfg.pmap.n_select),
                              denoised_electrodogram(pr, cfg.pmap.n_select)]
    name = f"s{job.index:05d}"
    reports = []
    for variant, proc in processed.items():
        nl, nr, cl, cr, dl, dr = _trim(*noisy_p, *clean_p, *proc)
        reports.append(MetricReport.compute(name, variant, cfg.seed, job.snr_db, job.noise_azimuth,
                                            (nl, nr), (cl, cr), (dl, dr)))
    return reports
