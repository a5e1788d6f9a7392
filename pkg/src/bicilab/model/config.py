from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, fields, replace

VARIANTS = ("monaural", "bilateral", "fused")


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters for one Deep ACE network.

    Defaults give a 22-electrode model whose latent frames run at
    16000 / 16 = 1000 per second, one per ACE stimulation frame.
    """

    n_filters: int = 64
    filter_len: int = 32
    stride: int = 16
    bottleneck_channels: int = 64
    hidden_channels: int = 128
    skip_channels: int = 32
    kernel_size: int = 3
    blocks_per_repeat: int = 8
    repeats: int = 3
    ded_channels: tuple[int, ...] = (128, 64, 22)
    m_channels: int = 22
    bce_weight: float = 1.0

    def __post_init__(self):
        ints = {f.name: getattr(self, f.name) for f in fields(self) if f.type in ("int", int)}
        for name, v in ints.items():
            if not isinstance(v, int) or v <= 0:
                raise ModelConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.stride > self.filter_len:
            raise ModelConfigError(f"stride {self.stride} exceeds filter length {self.filter_len}")
        if self.kernel_size % 2 == 0:
            raise ModelConfigError("kernel_size must be odd so that 'same' padding is symmetric")
        ded = tuple(self.ded_channels)
        if not ded or any(int(c) <= 0 for c in ded):
            raise ModelConfigError(f"ded_channels must be positive, got {ded}")
        if ded[-1] != self.m_channels:
            raise ModelConfigError(f"last DED layer has {ded[-1]} channels but m_channels is {self.m_channels}")
        if self.bce_weight < 0:
            raise ModelConfigError("bce_weight must be non-negative")
        object.__setattr__(self, "ded_channels", tuple(int(c) for c in ded))

    @classmethod
    def toy(cls, m_channels: int = 4) -> ModelConfig:
        """Small network for desk-scale training runs and gradient checks."""
        return cls(n_filters=8, filter_len=8, stride=4, bottleneck_channels=8, hidden_channels=16,
                   skip_channels=8, kernel_size=3, blocks_per_repeat=2, repeats=1,
                   ded_channels=(16, 8, m_channels), m_channels=m_channels)

    def with_channels(self, m_channels: int) -> ModelConfig:
        return replace(self, m_channels=m_channels, ded_channels=self.ded_channels[:-1] + (m_channels,))

    def latent_frames(self, n_samples: int) -> int:
        if n_samples < self.filter_len:
            raise ModelConfigError(f"input of {n_samples} samples is shorter than one {self.filter_len}-sample filter")
        return (n_samples - self.filter_len) // self.stride + 1

    def frame_rate(self, sample_rate: float) -> float:
        return sample_rate / self.stride

    def to_text(self, variant: str | None = None) -> str:
        cp = configparser.ConfigParser()
        cp["model"] = {k: (",".join(map(str, v)) if isinstance(v, tuple) else str(v))
                       for k, v in asdict(self).items()}
        if variant is not None:
            cp["model"]["variant"] = variant
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> tuple[ModelConfig, str | None]:
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if "model" not in cp:
            raise ModelConfigError("manifest has no [model] section")
        return cls.from_mapping(cp["model"])

    @classmethod
    def from_mapping(cls, section) -> tuple[ModelConfig, str | None]:
        """Build from string values (a config section); unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kwargs, variant = {}, None
        for key, raw in section.items():
            if key == "variant":
                variant = raw.strip()
                continue
            if key not in known:
                raise ModelConfigError(f"unknown model setting {key!r}")
            try:
                if key == "ded_channels":
                    kwargs[key] = tuple(int(c) for c in raw.split(","))
                elif key == "bce_weight":
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = int(raw)
            except ValueError as exc:
                raise ModelConfigError(f"bad value for {key}: {raw!r}") from exc
        if "m_channels" in kwargs and "ded_channels" not in kwargs:
            base = cls()
            kwargs["ded_channels"] = base.ded_channels[:-1] + (kwargs["m_channels"],)
        if variant is not None and variant not in VARIANTS:
            raise ModelConfigError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
        return cls(**kwargs), variant


def receptive_field(config: ModelConfig) -> int:
    """Latent frames seen by one separator output frame."""
    return 1 + (config.kernel_size - 1) * (2**config.blocks_per_repeat - 1) * config.repeats
