"""Training objectives: unfair fake construction, relativistic least-squares
adversarial losses, and the reconstruction terms of the generator loss."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import imaging
from .blocks import LEAKY_SLOPE
from .errors import DimensionError


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.16
    ms_ssim: float = 0.84
    adversarial: float = 0.001
    perceptual: float = 0.01

    def __post_init__(self):
        for name in ("l1", "ms_ssim", "adversarial", "perceptual"):
            value = float(getattr(self, name))
            if not (value >= 0.0 and value < float("inf")):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {value}")


@dataclass
class UnfairSample:
    x_f_star: torch.Tensor
    mu: torch.Tensor
    eta: torch.Tensor


def unfair_fake(x_f, x_r, generator: torch.Generator | None = None, mu=None, eta=None,
                per_image_mu: bool = True) -> UnfairSample:
    """Pull each fake toward its real counterpart by a random per-pixel fraction.

    ``x_f* = x_f + mu * eta * (x_r - x_f)`` with ``mu ~ U(0,1)`` once per image
    (per element if ``per_image_mu`` is False) and ``eta ~ U(0,1)`` per
    element.  ``x_f`` is detached: the result only feeds critic updates.
    Explicit ``mu`` / ``eta`` override sampling.
    """
    x_f = x_f.detach()
    if x_f.shape != x_r.shape:
        raise DimensionError(f"fake {tuple(x_f.shape)} and real {tuple(x_r.shape)} differ in shape")
    x_r = x_r.to(x_f.dtype)
    opts = dict(dtype=x_f.dtype, device=x_f.device, generator=generator)
    if mu is None:
        if per_image_mu:
            shape = (x_f.shape[0],) + (1,) * (x_f.dim() - 1) if x_f.dim() == 4 else (1,) * x_f.dim()
        else:
            shape = x_f.shape
        mu = torch.rand(shape, **opts)
    else:
        mu = torch.as_tensor(mu, dtype=x_f.dtype, device=x_f.device)
    if eta is None:
        eta = torch.rand(x_f.shape, **opts)
    else:
        eta = torch.as_tensor(eta, dtype=x_f.dtype, device=x_f.device)
    return UnfairSample(x_f + mu * eta * (x_r - x_f), mu, eta)


def _scores(*batches):
    out = []
    for s in batches:
        s = torch.as_tensor(s)
        if not s.is_floating_point():
            s = s.double()
        s = s.reshape(-1)
        if s.numel() == 0:
            raise ValueError("score batch is empty")
        out.append(s)
    return out


def d_loss(c_r, c_f_star) -> torch.Tensor:
    """Critic loss: push reals above the mean fake score by 1 and fakes below the mean real by 1."""
    c_r, c_f = _scores(c_r, c_f_star)
    return ((c_r - c_f.mean() - 1) ** 2).mean() + ((c_f - c_r.mean() + 1) ** 2).mean()


def g_adv_loss(c_f, c_r) -> torch.Tensor:
    """Generator adversarial loss, the mirror of :func:`d_loss` with fakes and reals swapped."""
    c_f, c_r = _scores(c_f, c_r)
    return ((c_f - c_r.mean() - 1) ** 2).mean() + ((c_r - c_f.mean() + 1) ** 2).mean()


def standard_d_loss(c_r, c_f) -> torch.Tensor:
    """Non-relativistic sigmoid cross-entropy critic loss (the plain GAN baseline)."""
    c_r, c_f = _scores(c_r, c_f)
    return (F.binary_cross_entropy_with_logits(c_r, torch.ones_like(c_r))
            + F.binary_cross_entropy_with_logits(c_f, torch.zeros_like(c_f)))


def standard_g_adv_loss(c_f, c_r=None) -> torch.Tensor:
    (c_f,) = _scores(c_f)
    return F.binary_cross_entropy_with_logits(c_f, torch.ones_like(c_f))


def l1_loss(x_f, x_r) -> torch.Tensor:
    """Mean absolute error over all elements."""
    x_f, x_r = imaging.as_tensor(x_f), imaging.as_tensor(x_r)
    if x_f.shape != x_r.shape:
        raise DimensionError(f"shape mismatch: {tuple(x_f.shape)} vs {tuple(x_r.shape)}")
    return (x_r - x_f).abs().mean()


def estnet_loss(x_dr_est, x_r) -> torch.Tensor:
    return l1_loss(x_r, x_dr_est)


def ms_ssim_loss(x_f, x_r) -> torch.Tensor:
    return 1.0 - imaging.ms_ssim(x_f, x_r, strict=False)


class FeatureExtractor(nn.Module):
    """Fixed random conv stack used as the perceptual feature space.

    Three stride-2 3x3 convs (16/32/64 channels) with LeakyReLU.  Weights
    come from ``seed`` and are frozen; a trained extractor can be loaded from
    a checkpoint instead.
    """

    def __init__(self, in_channels=3, widths=(16, 32, 64), seed=1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        width = in_channels
        for out in widths:
            conv = nn.Conv2d(width, out, 3, stride=2, padding=1)
            bound = (6.0 / (width * 9)) ** 0.5
            with torch.no_grad():
                conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen) * 2 * bound - bound)
                conv.bias.zero_()
            layers += [conv, nn.LeakyReLU(LEAKY_SLOPE)]
            width = out
        self.body = nn.Sequential(*layers)
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # frozen for the life of a run
        return super().train(False)

    def forward(self, x):
        return self.body(x)


def perceptual_loss(x_f, x_r, extractor) -> torch.Tensor:
    """Mean squared difference between extractor features of ``x_f`` and ``x_r``."""
    x_f, x_r = imaging.as_tensor(x_f), imaging.as_tensor(x_r)
    if x_f.shape != x_r.shape:
        raise DimensionError(f"shape mismatch: {tuple(x_f.shape)} vs {tuple(x_r.shape)}")
    try:
        feats_f = extractor(x_f)
        feats_r = extractor(x_r)
    except RuntimeError as exc:
        raise DimensionError(f"extractor cannot process input {tuple(x_f.shape)}: {exc}") from exc
    return ((feats_f - feats_r) ** 2).mean()


def generator_loss(x_f, x_r, c_f=None, c_r=None, weights: LossWeights | None = None,
                   extractor=None, adversarial=g_adv_loss):
    """Weighted sum of L1, MS-SSIM, adversarial and perceptual terms.

    Returns ``(total, components)``.  Without critic scores the adversarial
    term is zero; without an extractor the perceptual term is zero.
    """
    weights = weights or LossWeights()
    zero = x_f.new_zeros(())
    parts = {
        "l1": l1_loss(x_f, x_r),
        "ms_ssim": ms_ssim_loss(x_f, x_r),
        "adversarial": adversarial(c_f, c_r) if c_f is not None else zero,
        "perceptual": perceptual_loss(x_f, x_r, extractor) if extractor is not None else zero,
    }
    total = (weights.l1 * parts["l1"] + weights.ms_ssim * parts["ms_ssim"]
             + weights.adversarial * parts["adversarial"] + weights.perceptual * parts["perceptual"])
    return total, parts
