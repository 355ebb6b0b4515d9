"""Run configuration; JSON keys for the searched hyperparameters use their table names."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

VARIANTS = ("full", "1d_only", "2d_only", "2d_no_trans")
_VARIANT_ALIASES = {"1d": "1d_only", "2d": "2d_only"}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # searched hyperparameters (selected values as defaults)
    gcn_hidden_units: tuple = (78, 256, 128)
    pooling: str = "mean"
    learning_rate: float = 5e-4
    dropout: float = 0.3
    attention_heads: int = 4
    activation: str = "relu"
    encoder_layers: int = 2
    encoder_hidden: int = 64
    drug_1d_encoder: str = "auto"  # precomputed when the bundle ships vectors, else fallback

    # fixed architecture
    variant: str = "full"
    drug_dim: int = 768
    token_dim: int = 128
    cell_hidden: tuple = (512, 384)
    cell_dim: int = 256
    pool_dim: int = 256
    classifier_hidden: tuple = (512, 32)
    self_loops: bool = True
    n_genes: int = 978

    # training
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 15
    val_fraction: float = 0.1
    augment_swapped: bool = False
    stop_at_train_accuracy: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.variant = _VARIANT_ALIASES.get(self.variant, self.variant)
        for name in ("gcn_hidden_units", "cell_hidden", "classifier_hidden"):
            setattr(self, name, tuple(int(x) for x in getattr(self, name)))
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.pooling not in ("mean", "max"):
            raise ConfigError(f"pooling must be mean or max, got {self.pooling!r}")
        if self.activation not in ("relu", "gelu"):
            raise ConfigError(f"activation must be relu or gelu, got {self.activation!r}")
        if self.drug_1d_encoder not in ("auto", "fallback", "precomputed"):
            raise ConfigError(f"drug_1d_encoder must be auto, fallback or precomputed, got {self.drug_1d_encoder!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if len(self.gcn_hidden_units) < 2:
            raise ConfigError("gcn_hidden_units needs an input and at least one layer width")
        if self.model_dim % self.attention_heads:
            raise ConfigError(
                f"model dim {self.model_dim} (last GCN width) is not divisible by {self.attention_heads} heads"
            )
        if self.encoder_layers < 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("encoder_layers, batch_size and max_epochs must be non-negative (batch_size ≥ 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    @property
    def model_dim(self):
        return self.gcn_hidden_units[-1]

    @property
    def uses_1d(self):
        return self.variant in ("full", "1d_only")

    @property
    def uses_2d(self):
        return self.variant in ("full", "2d_only", "2d_no_trans")

    @property
    def n_encoder_layers(self):
        return 0 if self.variant == "2d_no_trans" else self.encoder_layers

    @property
    def classifier_input(self):
        width = 0
        if self.uses_1d:
            width += 2 * self.drug_dim + self.cell_dim
        if self.uses_2d:
            width += self.pool_dim
        return width

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)
