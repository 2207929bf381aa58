"""The three networks: the DRD-UNet generator, EstNet (the same UNet without
attention) and the spectrally normalized critic."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import AAM, DRDB, AuAM, LEAKY_SLOPE, apply_spectral_norm
from .errors import ConfigError, DimensionError


@dataclass
class AttentionConfig:
    rain_channels: int = 3
    edge_channels: int = 1
    rain_width: int = 16
    edge_width: int = 16
    hidden_width: int = 16
    activation: str = "daf"
    daf_growth: int = 16
    daf_layers: int = 3
    daf_dilation: int = 1

    @property
    def fused_channels(self) -> int:
        return self.rain_width + self.edge_width

    def validate(self):
        if self.activation not in ("daf", "relu"):
            raise ConfigError(f"unknown attention activation {self.activation!r}")
        for name in ("rain_channels", "edge_channels", "rain_width", "edge_width", "hidden_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class GeneratorConfig:
    in_channels: int = 3
    base_channels: int = 32
    depth: int = 3
    bottom_drdb_dilations: tuple = (1, 2, 4, 8)
    growth: int = 16
    drdb_layers: int = 3
    use_attention: bool = True
    attention: AttentionConfig = field(default_factory=AttentionConfig)

    @property
    def injection_points(self) -> int:
        return self.depth if self.use_attention else 0

    def validate(self):
        if len(self.bottom_drdb_dilations) != 4:
            raise ConfigError("the bottom of the UNet holds exactly four DRDBs")
        if self.depth < 1 or self.base_channels < 1:
            raise ConfigError("depth and base_channels must be positive")
        self.attention.validate()

    def to_dict(self):
        d = asdict(self)
        d["bottom_drdb_dilations"] = list(self.bottom_drdb_dilations)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["attention"] = AttentionConfig(**d.get("attention", {}))
        d["bottom_drdb_dilations"] = tuple(d.get("bottom_drdb_dilations", (1, 2, 4, 8)))
        return cls(**d)


@dataclass
class CriticConfig:
    in_channels: int = 3
    widths: tuple = (64, 128, 256, 512)
    use_attention: bool = True
    spectral_norm: bool = True
    attention: AttentionConfig = field(default_factory=AttentionConfig)

    def validate(self):
        if not self.widths:
            raise ConfigError("critic needs at least one conv stage")
        self.attention.validate()

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["attention"] = AttentionConfig(**d.get("attention", {}))
        d["widths"] = tuple(d.get("widths", (64, 128, 256, 512)))
        return cls(**d)


def _attention_kwargs(att: AttentionConfig):
    return dict(activation=att.activation, growth=att.daf_growth,
                layers=att.daf_layers, dilation=att.daf_dilation)


class DRDUNet(nn.Module):
    """Dilated residual dense UNet with a residual output head.

    Encoder stages are DRDB + stride-2 conv; the bottom chains four DRDBs
    (each with its own residual) plus a long skip; decoder stages are
    nearest upsample + conv, concat with the encoder skip, 1x1 fuse and a
    DRDB.  With attention on, an AAM encodes the priors once and AuAM ``k``
    gates the output of decoder stage ``k``.  Output is
    ``clamp(o + head(features), 0, 1)``.
    """

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        cfg = cfg or GeneratorConfig()
        cfg.validate()
        self.cfg = cfg
        widths = [cfg.base_channels * 2 ** i for i in range(cfg.depth + 1)]
        drdb = dict(growth=cfg.growth, layers=cfg.drdb_layers)

        self.stem = nn.Conv2d(cfg.in_channels, widths[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i in range(cfg.depth):
            self.enc_blocks.append(DRDB(widths[i], dilation=1, **drdb))
            self.downs.append(nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1))
        self.bottom = nn.ModuleList(DRDB(widths[-1], dilation=d, **drdb) for d in cfg.bottom_drdb_dilations)
        self.up_convs = nn.ModuleList()
        self.fuses = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for i in reversed(range(cfg.depth)):
            self.up_convs.append(nn.Conv2d(widths[i + 1], widths[i], 3, padding=1))
            self.fuses.append(nn.Conv2d(2 * widths[i], widths[i], 1))
            self.dec_blocks.append(DRDB(widths[i], dilation=1, **drdb))
        self.head = nn.Conv2d(widths[0], cfg.in_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

        if cfg.use_attention:
            att = cfg.attention
            kw = _attention_kwargs(att)
            self.aam = AAM(att.rain_channels, att.edge_channels, att.rain_width, att.edge_width, **kw)
            self.auams = nn.ModuleList(
                AuAM(att.fused_channels, widths[i], att.hidden_width, **kw)
                for i in reversed(range(cfg.depth))
            )

    @property
    def multiple(self) -> int:
        return 2 ** self.cfg.depth

    def forward(self, o, m_r=None, m_e=None):
        cfg = self.cfg
        if o.dim() != 4 or o.shape[1] != cfg.in_channels:
            raise DimensionError(f"expected (B,{cfg.in_channels},H,W), got {tuple(o.shape)}")
        h, w = o.shape[-2:]
        if h % self.multiple or w % self.multiple:
            raise DimensionError(f"spatial size {h}x{w} is not divisible by {self.multiple}")
        fused = None
        if cfg.use_attention:
            if m_r is None or m_e is None:
                raise ConfigError("this generator is prior-conditioned; pass m_r and m_e")
            if m_r.shape[-2:] != o.shape[-2:] or m_e.shape[-2:] != o.shape[-2:]:
                raise DimensionError("priors must share the input's spatial size")
            fused = self.aam(m_r.to(o.dtype), m_e.to(o.dtype))

        x = self.stem(o)
        skips = []
        for block, down in zip(self.enc_blocks, self.downs):
            x = block(x)
            skips.append(x)
            x = down(x)
        long_skip = x
        for block in self.bottom:
            x = block(x)
        x = x + long_skip
        for k, (up, fuse, block) in enumerate(zip(self.up_convs, self.fuses, self.dec_blocks)):
            x = up(F.interpolate(x, scale_factor=2, mode="nearest"))
            x = block(fuse(torch.cat([x, skips.pop()], dim=1)))
            if fused is not None:
                x = self.auams[k](fused, x)
        return torch.clamp(o + self.head(x), 0.0, 1.0)


def build_generator(cfg: GeneratorConfig | None = None) -> DRDUNet:
    return DRDUNet(cfg or GeneratorConfig())


def build_estnet(cfg: GeneratorConfig | None = None) -> DRDUNet:
    """EstNet shares the generator architecture with attention removed."""
    cfg = GeneratorConfig.from_dict((cfg or GeneratorConfig()).to_dict())
    cfg.use_attention = False
    return DRDUNet(cfg)


class Critic(nn.Module):
    """Stride-2 conv stack scoring each image with one unsquashed real number.

    Priors enter after the first stage through an AAM and one AuAM.  With
    ``spectral_norm`` every conv weight, attention modules included, is
    spectrally normalized.
    """

    def __init__(self, cfg: CriticConfig | None = None):
        super().__init__()
        cfg = cfg or CriticConfig()
        cfg.validate()
        self.cfg = cfg
        self.stages = nn.ModuleList()
        width = cfg.in_channels
        for out in cfg.widths:
            self.stages.append(nn.Conv2d(width, out, 3, stride=2, padding=1))
            width = out
        self.head = nn.Conv2d(width, 1, 3, padding=1)
        if cfg.use_attention:
            att = cfg.attention
            kw = _attention_kwargs(att)
            self.aam = AAM(att.rain_channels, att.edge_channels, att.rain_width, att.edge_width, **kw)
            self.auam = AuAM(att.fused_channels, cfg.widths[0], att.hidden_width, **kw)
        if cfg.spectral_norm:
            apply_spectral_norm(self)

    @property
    def min_side(self) -> int:
        return 2 ** len(self.cfg.widths)

    def forward(self, x, m_r=None, m_e=None):
        cfg = self.cfg
        if x.dim() != 4 or x.shape[1] != cfg.in_channels:
            raise DimensionError(f"expected (B,{cfg.in_channels},H,W), got {tuple(x.shape)}")
        if min(x.shape[-2:]) < self.min_side:
            raise DimensionError(f"critic needs sides >= {self.min_side}, got {tuple(x.shape[-2:])}")
        fused = None
        if cfg.use_attention:
            if m_r is None or m_e is None:
                raise ConfigError("this critic is prior-conditioned; pass m_r and m_e")
            fused = self.aam(m_r.to(x.dtype), m_e.to(x.dtype))
        h = x
        for i, conv in enumerate(self.stages):
            h = F.leaky_relu(conv(h), LEAKY_SLOPE)
            if i == 0 and fused is not None:
                h = self.auam(fused, h)
        return self.head(h).mean(dim=(1, 2, 3))


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
