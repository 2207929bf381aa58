"""Training configuration and the ablation variant ladder."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .networks import AttentionConfig, CriticConfig, GeneratorConfig


@dataclass(frozen=True)
class Variant:
    tag: str
    bottom_dilations: tuple
    attention: str | None  # None, "relu" or "daf"
    adversarial: str | None  # None, "standard" or "unfair"


VARIANTS = {
    v.tag: v
    for v in (
        Variant("U", (1, 1, 1, 1), None, None),
        Variant("U+D", (1, 2, 4, 8), None, None),
        Variant("U+D+G", (1, 2, 4, 8), None, "standard"),
        Variant("U+D+ReLU+G", (1, 2, 4, 8), "relu", "standard"),
        Variant("U+D+ReLU+UG", (1, 2, 4, 8), "relu", "unfair"),
        Variant("UnfairGAN", (1, 2, 4, 8), "daf", "unfair"),
    )
}
LADDER = tuple(VARIANTS)


def get_variant(tag: str) -> Variant:
    if tag not in VARIANTS:
        hint = " (the XUnit variant is not available)" if "XU" in tag else ""
        raise ConfigError(f"unknown variant {tag!r}{hint}; choose from {', '.join(LADDER)}")
    return VARIANTS[tag]


@dataclass
class TrainConfig:
    patch_size: int = 64
    batch_size: int = 8
    est_steps: int = 200
    gan_steps: int = 200
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    seed: int = 0
    loss_weights: dict = field(default_factory=lambda: asdict(LossWeights()))
    variant: str = "UnfairGAN"
    base_channels: int = 32
    depth: int = 3
    growth: int = 16
    drdb_layers: int = 3
    attention_width: int = 16
    critic_widths: list = field(default_factory=lambda: [64, 128, 256, 512])
    update_critic: bool = True
    per_image_mu: bool = True
    extractor_seed: int = 1234
    threads: int = 1
    log_every: int = 20

    def __post_init__(self):
        self.validate()

    def validate(self):
        get_variant(self.variant)
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.patch_size % 2 ** self.depth:
            raise ConfigError(f"patch_size {self.patch_size} is not divisible by 2**depth = {2 ** self.depth}")
        if not 0.0 <= self.lookahead_alpha <= 1.0:
            raise ConfigError("lookahead_alpha must lie in [0, 1]")
        if self.lookahead_k < 1:
            raise ConfigError("lookahead_k must be >= 1")
        if self.batch_size < 1 or self.est_steps < 0 or self.gan_steps < 0:
            raise ConfigError("batch_size must be >= 1 and step counts >= 0")
        if min(self.critic_widths or [0]) < 1:
            raise ConfigError("critic_widths must be non-empty positive counts")
        try:
            self.weights
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad loss_weights: {exc}") from exc

    @property
    def weights(self) -> LossWeights:
        return LossWeights(**self.loss_weights)

    @property
    def variant_spec(self) -> Variant:
        return get_variant(self.variant)

    def _attention(self, activation):
        w = self.attention_width
        return AttentionConfig(rain_width=w, edge_width=w, hidden_width=w,
                               activation=activation or "daf", daf_growth=self.growth,
                               daf_layers=self.drdb_layers)

    def generator_config(self) -> GeneratorConfig:
        v = self.variant_spec
        return GeneratorConfig(base_channels=self.base_channels, depth=self.depth,
                               bottom_drdb_dilations=tuple(v.bottom_dilations), growth=self.growth,
                               drdb_layers=self.drdb_layers, use_attention=v.attention is not None,
                               attention=self._attention(v.attention))

    def estnet_config(self) -> GeneratorConfig:
        return replace(self.generator_config(), bottom_drdb_dilations=(1, 2, 4, 8), use_attention=False)

    def critic_config(self) -> CriticConfig:
        v = self.variant_spec
        return CriticConfig(widths=tuple(self.critic_widths),
                            use_attention=v.adversarial == "unfair" and v.attention is not None,
                            attention=self._attention(v.attention))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        d = dict(d)
        if "loss_weights" in d:
            d["loss_weights"] = {**asdict(LossWeights()), **d["loss_weights"]}
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def with_updates(self, **changes) -> "TrainConfig":
        return replace(self, **changes)
