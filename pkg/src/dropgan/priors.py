"""Conditioning maps for the generator and critic: edges and the rain residual."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import imaging
from .errors import DimensionError, InputError

EDGE_SIGMA = 1.0
EDGE_RADIUS = 3
EDGE_PERCENTILE = 0.99
# magnitudes below this are rounding noise from the smoothing sums
EDGE_FLOOR = 1e-8

SOBEL_X = ((-1.0, 0.0, 1.0), (-2.0, 0.0, 2.0), (-1.0, 0.0, 1.0))
SOBEL_Y = ((-1.0, -2.0, -1.0), (0.0, 0.0, 0.0), (1.0, 2.0, 1.0))

RAIN_MAP_MAGIC = b"UFRM"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_HEADER = struct.Struct("<4sHHII")  # magic, dtype code, C, H, W -> 16 bytes


def _gaussian_kernel(dtype):
    return imaging.gaussian_window(2 * EDGE_RADIUS + 1, EDGE_SIGMA, dtype=dtype)


def edge_map(x) -> torch.Tensor:
    """Sobel gradient magnitude of the smoothed luminance, scaled by its 99th percentile.

    Accepts (C,H,W) or (B,C,H,W); returns (1,H,W) or (B,1,H,W) in [0,1].
    Stands in for a learned edge detector; swap in real maps with
    :func:`load_external_prior`.
    """
    t = imaging.as_tensor(x)
    single = t.dim() == 3
    t = imaging._batched(t)
    if not t.is_floating_point():
        t = t.double()
    with torch.no_grad():
        gray = imaging.to_luminance(t)
        g = _gaussian_kernel(gray.dtype).to(gray.device)
        k = g.numel()
        p = EDGE_RADIUS
        smooth = F.conv2d(F.pad(gray, (p, p, 0, 0), mode="reflect"), g.view(1, 1, 1, k))
        smooth = F.conv2d(F.pad(smooth, (0, 0, p, p), mode="reflect"), g.view(1, 1, k, 1))
        padded = F.pad(smooth, (1, 1, 1, 1), mode="reflect")
        kx = torch.tensor(SOBEL_X, dtype=gray.dtype, device=gray.device).view(1, 1, 3, 3)
        ky = torch.tensor(SOBEL_Y, dtype=gray.dtype, device=gray.device).view(1, 1, 3, 3)
        gx = F.conv2d(padded, kx)
        gy = F.conv2d(padded, ky)
        mag = torch.sqrt(gx * gx + gy * gy)
        mag = torch.where(mag < EDGE_FLOOR, torch.zeros_like(mag), mag)
        scale = torch.quantile(mag.flatten(1), EDGE_PERCENTILE, dim=1).view(-1, 1, 1, 1)
        out = torch.where(scale > 0, mag / torch.where(scale > 0, scale, torch.ones_like(scale)), torch.zeros_like(mag))
        out = out.clamp(0.0, 1.0)
    return out[0] if single else out


def rain_map(x_ra, est) -> torch.Tensor:
    """Signed residual ``x_ra - est(x_ra)``.

    Float32 inputs are differenced in float64 so that ``rain_map + est(x)``
    reproduces ``x`` exactly.
    """
    x = imaging.as_tensor(x_ra)
    try:
        e = est(x)
    except RuntimeError as exc:
        raise DimensionError(f"estimator rejected input of shape {tuple(x.shape)}: {exc}") from exc
    e = imaging.as_tensor(e)
    if e.shape != x.shape:
        raise DimensionError(f"estimator output {tuple(e.shape)} does not match input {tuple(x.shape)}")
    wide = torch.promote_types(torch.promote_types(x.dtype, e.dtype), torch.float64)
    return x.to(wide) - e.to(wide)


def save_rain_map(path, data) -> None:
    arr = np.asarray(data.detach().cpu().numpy() if isinstance(data, torch.Tensor) else data)
    if arr.ndim != 3:
        raise DimensionError(f"expected (C,H,W) array, got shape {arr.shape}")
    code = 2 if arr.dtype == np.float64 else 1
    arr = arr.astype(_DTYPE_CODES[code])
    c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RAIN_MAP_MAGIC, code, c, h, w))
        fh.write(arr.tobytes(order="C"))


def _read_rain_map(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path} is too short for a rain-map header")
    magic, code, c, h, w = _HEADER.unpack_from(raw)
    if magic != RAIN_MAP_MAGIC or code not in _DTYPE_CODES:
        raise InputError(f"{path} is not a rain-map file")
    dtype = _DTYPE_CODES[code]
    expected = c * h * w * dtype.itemsize
    if len(raw) - _HEADER.size != expected:
        raise InputError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(c, h, w).copy()


def load_external_prior(path, kind: str | None = None, size: tuple[int, int] | None = None) -> torch.Tensor:
    """Load an edge map (PNG) or rain map (raw array file) produced elsewhere.

    ``kind`` defaults from the extension: ``.png`` is an edge map, anything
    else a rain map.  Edge PNGs map to [0,1] (channel mean for RGB files); rain
    PNGs map to [-1,1]; raw rain arrays are clipped to [-1,1].  ``size`` is the
    expected (H, W).
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"prior file not found: {path}")
    is_png = path.suffix.lower() == ".png"
    kind = kind or ("edge" if is_png else "rain")
    if kind not in ("edge", "rain"):
        raise ValueError(f"kind must be 'edge' or 'rain', not {kind!r}")

    if is_png:
        arr = imaging.load_png(path).astype(np.float64)
        if kind == "edge":
            arr = arr.mean(axis=0, keepdims=True)
        else:
            arr = 2.0 * arr - 1.0
    else:
        arr = _read_rain_map(path)
        lo = 0.0 if kind == "edge" else -1.0
        arr = np.clip(arr, lo, 1.0)

    if size is not None and tuple(arr.shape[-2:]) != tuple(size):
        raise DimensionError(f"prior {path} is {arr.shape[-2:]} but {tuple(size)} was expected")
    return torch.from_numpy(np.ascontiguousarray(arr))
