"""Image containers, PNG IO and the PSNR / SSIM / MS-SSIM fidelity metrics.

Images are ``(C, H, W)`` arrays (numpy or torch) with intensities in [0, 1].
Metric functions also accept ``(B, C, H, W)`` batches; the result is then the
batch mean.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DimensionError, TooSmallError

PSNR_CAP = 100.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
# five scales with a valid 11x11 window at the coarsest one
MS_SSIM_MIN_SIDE = SSIM_WINDOW * 2 ** (len(MS_SSIM_WEIGHTS) - 1)


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    return torch.from_numpy(np.ascontiguousarray(x))


def _batched(x) -> torch.Tensor:
    x = as_tensor(x)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4:
        raise DimensionError(f"expected (C,H,W) or (B,C,H,W), got shape {tuple(x.shape)}")
    return x


def _check_pair(a, b):
    a, b = _batched(a), _batched(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dtype != b.dtype:
        dtype = torch.promote_types(a.dtype, b.dtype)
        a, b = a.to(dtype), b.to(dtype)
    return a, b


def to_luminance(x: torch.Tensor) -> torch.Tensor:
    """Reduce a (B,3,H,W) batch to (B,1,H,W) luma; single-channel input passes through."""
    if x.shape[-3] == 1:
        return x
    if x.shape[-3] != 3:
        raise DimensionError(f"expected 1 or 3 channels, got {x.shape[-3]}")
    r, g, b = x.unbind(dim=-3)
    wr, wg, wb = LUMA_WEIGHTS
    return (wr * r + wg * g + wb * b).unsqueeze(-3)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0; identical images give ``PSNR_CAP``."""
    a, b = _check_pair(a, b)
    a, b = a.detach().double(), b.detach().double()
    mse = ((a - b) ** 2).flatten(1).mean(dim=1)
    values = [PSNR_CAP if m == 0 else 10.0 * math.log10(1.0 / m) for m in mse.tolist()]
    return float(np.mean(values))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return (g / g.sum()).to(dtype)


def _filter_valid(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    # separable valid-mode filtering of a (B,1,H,W) batch
    k = win.numel()
    x = F.conv2d(x, win.view(1, 1, 1, k))
    return F.conv2d(x, win.view(1, 1, k, 1))


def _ssim_terms(x: torch.Tensor, y: torch.Tensor, win: torch.Tensor):
    """Per-image mean SSIM and mean contrast-structure term for (B,1,H,W) inputs."""
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = _filter_valid(x * x, win) - mu_xx
    var_y = _filter_valid(y * y, win) - mu_yy
    cov = _filter_valid(x * y, win) - mu_xy
    cs_map = (2 * cov + c2) / (var_x + var_y + c2)
    ssim_map = (2 * mu_xy + c1) / (mu_xx + mu_yy + c1) * cs_map
    return ssim_map.flatten(1).mean(dim=1), cs_map.flatten(1).mean(dim=1)


def _prepare_gray(a, b):
    a, b = _check_pair(a, b)
    if not a.is_floating_point():
        a, b = a.double(), b.double()
    return to_luminance(a), to_luminance(b)


def ssim(a, b) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5) on luminance."""
    x, y = _prepare_gray(a, b)
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise TooSmallError(f"SSIM needs sides >= {SSIM_WINDOW}, got {tuple(x.shape[-2:])}")
    x, y = x.detach().double(), y.detach().double()
    s, _ = _ssim_terms(x, y, gaussian_window())
    return float(s.mean())


def _downsample(x: torch.Tensor) -> torch.Tensor:
    # 2x2 average pooling; odd trailing rows/columns are averaged over what exists
    return F.avg_pool2d(x, kernel_size=2, stride=2, ceil_mode=True)


def ms_ssim(a, b, strict: bool = True) -> torch.Tensor:
    """Five-scale MS-SSIM on luminance, returned as a (differentiable) 0-dim tensor.

    With ``strict`` the 11x11 window is applied in valid mode at every scale,
    which requires sides of at least 176 px.  Training patches are smaller, so
    the loss path uses ``strict=False``: at scales narrower than the window the
    window shrinks to the largest odd size that fits (same sigma, renormalized).
    """
    x, y = _prepare_gray(a, b)
    side = min(x.shape[-2:])
    if strict and side < MS_SSIM_MIN_SIDE:
        raise TooSmallError(f"MS-SSIM needs sides >= {MS_SSIM_MIN_SIDE}, got {tuple(x.shape[-2:])}")
    weights = torch.tensor(MS_SSIM_WEIGHTS, dtype=x.dtype, device=x.device)
    levels = len(MS_SSIM_WEIGHTS)
    factors = []
    for level in range(levels):
        side = min(x.shape[-2:])
        size = min(SSIM_WINDOW, side if side % 2 == 1 else side - 1)
        win = gaussian_window(size, dtype=x.dtype).to(x.device)
        s, cs = _ssim_terms(x, y, win)
        if level < levels - 1:
            factors.append(torch.relu(cs))
            x, y = _downsample(x), _downsample(y)
        else:
            factors.append(torch.relu(s))
    stacked = torch.stack(factors, dim=0)  # (levels, B)
    per_image = torch.prod(stacked ** weights.unsqueeze(1), dim=0)
    return per_image.mean()


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG into a float32 (C,H,W) array in [0,1]. Alpha is dropped."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float32)[None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1)
    return np.ascontiguousarray(arr / np.float32(255.0))


def quantize(img) -> np.ndarray:
    """Map [0,1] floats to uint8 with round-half-up."""
    arr = np.asarray(img.detach().cpu().numpy() if isinstance(img, torch.Tensor) else img, dtype=np.float64)
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_png(path, img) -> None:
    q = quantize(img)
    if q.ndim != 3 or q.shape[0] not in (1, 3):
        raise DimensionError(f"expected (1|3,H,W) image, got shape {q.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if q.shape[0] == 1:
        Image.fromarray(q[0]).save(path, format="PNG")
    else:
        Image.fromarray(np.ascontiguousarray(q.transpose(1, 2, 0))).save(path, format="PNG")
