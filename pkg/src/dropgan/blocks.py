"""Building blocks: dilated residual dense blocks, the dilated activation
function, the prior attention modules and spectral normalization."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import parametrize

from .errors import DimensionError

LEAKY_SLOPE = 0.2
SIGMA_FLOOR = 1e-12


def _check_channels(x, expected, what):
    if x.dim() != 4 or x.shape[1] != expected:
        raise DimensionError(f"{what} expects (B,{expected},H,W), got {tuple(x.shape)}")


class DRDB(nn.Module):
    """Dilated residual dense block.

    ``layers`` dilated 3x3 convs, each fed the concatenation of the block
    input and every earlier layer output, fused back to ``in_channels`` by a
    1x1 conv and added to the input.
    """

    def __init__(self, in_channels, growth=16, layers=3, dilation=1):
        super().__init__()
        if layers < 1:
            raise ValueError("DRDB needs at least one layer")
        self.in_channels = in_channels
        self.dilation = dilation
        self.convs = nn.ModuleList()
        width = in_channels
        for _ in range(layers):
            self.convs.append(nn.Conv2d(width, growth, 3, padding=dilation, dilation=dilation))
            width += growth
        self.fuse = nn.Conv2d(width, in_channels, 1)

    def forward(self, x):
        _check_channels(x, self.in_channels, "DRDB")
        feats = [x]
        for conv in self.convs:
            feats.append(F.leaky_relu(conv(torch.cat(feats, dim=1)), LEAKY_SLOPE))
        return self.fuse(torch.cat(feats, dim=1)) + x


class DAF(nn.Module):
    """Dilated activation function: ``u = v * exp(-z**2)`` with
    ``z = depthwise_conv(DRDB(leaky_relu(v)))``."""

    def __init__(self, channels, growth=16, layers=3, dilation=1):
        super().__init__()
        self.channels = channels
        self.drdb = DRDB(channels, growth, layers, dilation)
        self.depthwise = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)

    def weight_map(self, v):
        z = self.depthwise(self.drdb(F.leaky_relu(v, LEAKY_SLOPE)))
        return torch.exp(-z * z)

    def forward(self, v):
        _check_channels(v, self.channels, "DAF")
        return v * self.weight_map(v)


def make_activation(kind, channels, growth=16, layers=3, dilation=1):
    if kind == "daf":
        return DAF(channels, growth, layers, dilation)
    if kind == "relu":
        return nn.ReLU()
    raise ValueError(f"unknown attention activation {kind!r}")


class AAM(nn.Module):
    """Encodes the rain map and the edge map into one fused feature map."""

    def __init__(self, rain_channels=3, edge_channels=1, rain_width=16, edge_width=16,
                 activation="daf", growth=16, layers=3, dilation=1):
        super().__init__()
        self.rain_channels = rain_channels
        self.edge_channels = edge_channels
        self.out_channels = rain_width + edge_width
        self.rain_conv = nn.Conv2d(rain_channels, rain_width, 3, padding=1)
        self.edge_conv = nn.Conv2d(edge_channels, edge_width, 3, padding=1)
        self.rain_act = make_activation(activation, rain_width, growth, layers, dilation)
        self.edge_act = make_activation(activation, edge_width, growth, layers, dilation)

    def forward(self, m_r, m_e):
        _check_channels(m_r, self.rain_channels, "AAM rain input")
        _check_channels(m_e, self.edge_channels, "AAM edge input")
        if m_r.shape[-2:] != m_e.shape[-2:] or m_r.shape[0] != m_e.shape[0]:
            raise DimensionError(f"rain map {tuple(m_r.shape)} and edge map {tuple(m_e.shape)} disagree")
        r = self.rain_act(self.rain_conv(m_r))
        e = self.edge_act(self.edge_conv(m_e))
        return torch.cat([r, e], dim=1)


class AuAM(nn.Module):
    """Gates a hidden feature map ``t`` with features derived from the fused prior map.

    The fused map is average-pooled to ``t``'s size; the gate is the raw
    output of the second conv (no squashing).
    """

    def __init__(self, fused_channels, target_channels, hidden=16, activation="daf",
                 growth=16, layers=3, dilation=1):
        super().__init__()
        self.fused_channels = fused_channels
        self.target_channels = target_channels
        self.conv_f = nn.Conv2d(fused_channels, hidden, 3, padding=1)
        self.act = make_activation(activation, hidden, growth, layers, dilation)
        self.conv_s = nn.Conv2d(hidden, target_channels, 3, padding=1)
        # start as a near-identity gate
        with torch.no_grad():
            self.conv_s.weight.mul_(0.1)
            self.conv_s.bias.fill_(1.0)

    def gate(self, m_f, size):
        if m_f.shape[-2:] != size:
            m_f = F.adaptive_avg_pool2d(m_f, size)
        return self.conv_s(self.act(self.conv_f(m_f)))

    def forward(self, m_f, t):
        _check_channels(m_f, self.fused_channels, "AuAM fused input")
        if t.dim() != 4 or t.shape[1] != self.target_channels:
            raise DimensionError(f"AuAM gate has {self.target_channels} channels, target is {tuple(t.shape)}")
        if m_f.shape[-2] < t.shape[-2] or m_f.shape[-1] < t.shape[-1]:
            raise DimensionError(f"fused map {tuple(m_f.shape[-2:])} is smaller than target {tuple(t.shape[-2:])}")
        return t * self.gate(m_f, t.shape[-2:])


def _l2normalize(x, eps=SIGMA_FLOOR):
    return x / x.norm().clamp_min(eps)


def spectral_normalize(weight, u, v=None, n_iterations=1):
    """Power-iteration spectral normalization of a (conv) weight.

    The weight is viewed as ``(out, in*kh*kw)``.  Runs ``n_iterations`` steps
    on the persistent vectors ``(u, v)`` and returns
    ``(weight / sigma, u, v, sigma)`` with ``sigma = u^T W v`` floored at 1e-12.
    Gradients flow through ``weight`` only.
    """
    mat = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        for _ in range(n_iterations):
            v = _l2normalize(mat.t() @ u)
            u = _l2normalize(mat @ v)
        if v is None:
            v = _l2normalize(mat.t() @ u)
    sigma = torch.dot(u, mat @ v).clamp_min(SIGMA_FLOOR)
    return weight / sigma, u, v, sigma


class SpectralNorm(nn.Module):
    """Parametrization: one power-iteration step per forward while training.

    (u, v) start at the exact top singular pair of the initial weight.  Random
    conv kernels often have nearly tied top singular values, where a random
    start needs hundreds of power steps; after that the one step per update
    only has to track the slow drift of the weights.
    """

    def __init__(self, weight, n_iterations=1):
        super().__init__()
        self.n_iterations = n_iterations
        mat = weight.detach().reshape(weight.shape[0], -1).double()
        if mat.abs().max() > 0:
            left, _, right = torch.linalg.svd(mat, full_matrices=False)
            u, v = left[:, 0], right[0]
        else:
            u = _l2normalize(mat.new_ones(mat.shape[0]))
            v = _l2normalize(mat.new_ones(mat.shape[1]))
        u, v = u.to(weight.dtype), v.to(weight.dtype)
        self.register_buffer("u", u)
        self.register_buffer("v", v)

    def forward(self, weight):
        steps = self.n_iterations if self.training else 0
        w, u, v, _ = spectral_normalize(weight, self.u, self.v, steps)
        if steps:
            with torch.no_grad():
                self.u.copy_(u)
                self.v.copy_(v)
        return w


def apply_spectral_norm(module: nn.Module, n_iterations=1) -> nn.Module:
    """Register :class:`SpectralNorm` on every conv weight inside ``module``."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d) and not parametrize.is_parametrized(m, "weight"):
            parametrize.register_parametrization(m, "weight", SpectralNorm(m.weight, n_iterations))
    return module


def spectral_norm_modules(module: nn.Module):
    """Yield ``(name, conv)`` for every spectrally normalized conv in ``module``."""
    for name, m in module.named_modules():
        if isinstance(m, nn.Conv2d) and parametrize.is_parametrized(m, "weight"):
            yield name, m
