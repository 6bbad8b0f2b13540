"""Model and training configuration.

Both configs serialize to JSON with kebab-case keys. ``config_hash`` gives a
stable content hash used to tie checkpoints, reports and datasets together.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Invalid configuration or parameter value."""


def _to_kebab(name: str) -> str:
    return name.replace("_", "-")


def _from_kebab(name: str) -> str:
    return name.replace("-", "_")


def _dump(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            value = _dump(value)
        out[_to_kebab(f.name)] = value
    return out


@dataclass(frozen=True)
class ModelConfig:
    frame_size: int = 64
    glimpse_size: int = 28
    num_objects: int = 2
    n_input: int = 10  # K
    n_total: int = 20  # T

    frame_embed_dim: int = 128
    conv_channels: tuple = (16, 32, 64)
    hidden_y: int = 64
    hidden_p: int = 64
    hidden_a: int = 128
    tran_hidden: int = 64

    z_appearance: int = 128
    a_static: int = 256
    a_dynamic: int = 48
    pose_dim: int = 3
    glimpse_embed_dim: int = 128
    glimpse_channels: tuple = (16, 32)
    decoder_channels: tuple = (32, 16)

    scale_min: float = 0.15
    scale_max: float = 1.0
    init_scale: float = 28 / 64
    missing_bias: float = -0.5
    sigma_floor: float = 1e-4

    likelihood: str = "bernoulli"  # or "gaussian"
    gaussian_sigma: float = 0.1

    no_missingness: bool = False
    static_appearance: bool = False
    soft_labels: bool = False

    def __post_init__(self):
        if self.num_objects < 1:
            raise ConfigError("num_objects must be >= 1")
        if not 1 <= self.n_input < self.n_total:
            raise ConfigError("need 1 <= n_input < n_total")
        if not 0 < self.scale_min < self.scale_max:
            raise ConfigError("need 0 < scale_min < scale_max")
        if self.likelihood not in ("bernoulli", "gaussian"):
            raise ConfigError(f"unknown likelihood {self.likelihood!r}")
        # JSON round trips lists; keep tuples so the config stays hashable
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))
        object.__setattr__(self, "glimpse_channels", tuple(self.glimpse_channels))

    def to_dict(self) -> dict:
        return _dump(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{_from_kebab(k): v for k, v in d.items()})

    @classmethod
    def small(cls, **overrides) -> "ModelConfig":
        """Tiny network used by unit tests and gradient checks."""
        base = dict(
            frame_size=32, glimpse_size=12, n_input=4, n_total=6,
            frame_embed_dim=16, conv_channels=(4, 4, 4), hidden_y=8,
            hidden_p=8, hidden_a=8, tran_hidden=8, z_appearance=6,
            a_static=8, a_dynamic=4, glimpse_embed_dim=8,
            decoder_channels=(4, 4), glimpse_channels=(4, 4), init_scale=0.4,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    scenario: int = 2
    lr: float = 1e-3
    lr_decay_factor: float = 0.4
    lr_decay_at: float = 1 / 3  # fraction of total iterations
    batch_size: int = 64
    epochs: int = 300
    sequences_per_epoch: int = 10_000
    p_substitute: float = 0.25
    p_dynamic: float = 0.7
    p_dynamic_late: float = 0.85
    p_dynamic_switch: int = 3000
    grad_clip: float = 5.0
    checkpoint_every: int = 1000
    digit_speed: float = 3.6
    no_missingness: bool = False
    static_appearance: bool = False
    soft_labels: bool = False
    deterministic: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", ModelConfig.from_dict(self.model))
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.scenario not in (1, 2, 3):
            raise ConfigError(f"scenario must be 1, 2 or 3, got {self.scenario}")
        for name in ("p_substitute", "p_dynamic", "p_dynamic_late"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")

    @property
    def total_iterations(self) -> int:
        return max(1, self.epochs * self.sequences_per_epoch // self.batch_size)

    def model_config(self) -> ModelConfig:
        """Model config with this run's ablation flags applied."""
        return dataclasses.replace(
            self.model,
            no_missingness=self.no_missingness or self.model.no_missingness,
            static_appearance=self.static_appearance or self.model.static_appearance,
            soft_labels=self.soft_labels or self.model.soft_labels,
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _dump(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kw: dict[str, Any] = {_from_kebab(k): v for k, v in d.items()}
        if "model" in kw:
            kw["model"] = ModelConfig.from_dict(kw["model"])
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


def config_hash(cfg) -> str:
    """Short sha256 over the canonical JSON form of a config or dict."""
    d = cfg if isinstance(cfg, dict) else cfg.to_dict()
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
