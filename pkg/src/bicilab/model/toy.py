"""Desk-scale training material: stationary tone scenes for the reduced model.

Each scene puts a two-tone target in two of the four bands of a uniform band
table and adds white noise at a random position and SNR. Selection targets are
then stable over time, so a small network can fit them in a few hundred steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ace import BandTable, LgfParams, PatientMap
from ..corpus import tone_complex
from ..dsp import CANONICAL_RATE, SampleBuffer
from ..scene import BinauralPair, SceneSpec, build_pair, scene_rngs
from .config import ModelConfig
from .training import TrainConfig, TrainingExample

TOY_CHANNELS = 4
TOY_SELECT = 2
TOY_LR = 1e-2


@dataclass(frozen=True)
class ToySet:
    pairs: list[BinauralPair]
    examples: list[TrainingExample]
    pmap: PatientMap
    table: BandTable


def toy_config() -> ModelConfig:
    return ModelConfig.toy(TOY_CHANNELS)


def toy_train_config(seed: int = 0, max_steps: int = 500) -> TrainConfig:
    return TrainConfig(max_epochs=max_steps, lr=TOY_LR, batch_size=2, max_steps=max_steps, seed=seed)


def toy_patient_map(config: ModelConfig | None = None) -> PatientMap:
    config = config or toy_config()
    # one ACE frame per latent frame
    return PatientMap.default(config.m_channels, TOY_SELECT, CANONICAL_RATE / config.stride)


def tone_scenes(n_scenes: int = 8, seed: int = 7, seconds: float = 1.0,
                config: ModelConfig | None = None) -> ToySet:
    config = config or toy_config()
    table = BandTable.uniform(config.m_channels)
    pmap = toy_patient_map(config)
    rate = CANONICAL_RATE
    n = int(round(seconds * rate))
    pairs, examples = [], []
    for rng in scene_rngs(seed, n_scenes):
        bands = rng.choice(config.m_channels, TOY_SELECT, replace=False)
        centres = [(lo + hi) // 2 * rate / table.fft_len for lo, hi in (table.bin_ranges[b] for b in bands)]
        target = tone_complex(centres, rng.uniform(0.15, 0.4, TOY_SELECT), seconds, rate,
                              rng.uniform(0, 2 * np.pi, TOY_SELECT))
        noise = SampleBuffer(0.05 * rng.standard_normal(n), rate)
        spec = SceneSpec(target, noise, target_azimuth=float(rng.uniform(-60, 60)),
                         noise_azimuth=float(rng.uniform(-90, 90)), snr_db=float(rng.uniform(0, 5)))
        pair = build_pair(spec)
        pairs.append(pair)
        examples.append(TrainingExample.from_pair(pair, pmap, LgfParams(), table))
    return ToySet(pairs, examples, pmap, table)
