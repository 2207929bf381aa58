"""Seeded raindrop / rain-flow compositor for paired training data.

Drops are soft elliptical alpha regions whose interior shows a vertically
flipped, magnified view of the surrounding scene (a crude lens), blurred and
slightly brightened.  Some drops are extruded downward into flow streaks.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imaging
from .errors import DimensionError, InputError

# Drop counts are specified per this many pixels and scaled with image area.
REFERENCE_AREA = 256 * 256
MIN_SIDE = 64
REFRACTION_SCALE = 1.2
BRIGHTNESS_LIFT = 0.05
EDGE_SOFTNESS = 0.35

MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ("index", "clean_source", "seed", "preset")


@dataclass(frozen=True)
class RainPreset:
    name: str
    drop_count_range: tuple[int, int]
    radius_range: tuple[float, float]
    flow_probability: float
    blur_sigma: float

    def __post_init__(self):
        lo, hi = self.drop_count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad drop_count_range {self.drop_count_range}")
        rlo, rhi = self.radius_range
        if rlo <= 0 or rhi < rlo:
            raise ValueError(f"bad radius_range {self.radius_range}")
        if not 0.0 <= self.flow_probability <= 1.0:
            raise ValueError("flow_probability must lie in [0, 1]")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be non-negative")


PRESETS = {
    "heavy": RainPreset("heavy", (40, 80), (6.0, 24.0), 0.5, 2.0),
    "moderate": RainPreset("moderate", (15, 40), (4.0, 16.0), 0.25, 1.5),
    "light": RainPreset("light", (3, 15), (3.0, 10.0), 0.1, 1.0),
}


def get_preset(preset) -> RainPreset:
    if isinstance(preset, RainPreset):
        return preset
    try:
        return PRESETS[preset]
    except KeyError:
        raise InputError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class PairedSample:
    rain: np.ndarray
    clean: np.ndarray
    drop_mask: np.ndarray
    seed: int
    drop_count: int = 0
    meta: dict = field(default_factory=dict)


def _drop_count(rng, preset, area):
    lo, hi = preset.drop_count_range
    expected = rng.integers(lo, hi + 1) * area / REFERENCE_AREA
    whole = math.floor(expected)
    return whole + int(rng.random() < expected - whole)


def _drop_alpha(rng, preset, ys, xs, cy, cx, radius):
    semi_a = radius * rng.uniform(0.7, 1.3)
    semi_b = radius * rng.uniform(0.7, 1.3)
    theta = rng.uniform(0.0, math.pi)
    flow = 0.0
    if rng.random() < preset.flow_probability:
        flow = radius * rng.uniform(1.5, 4.0)
    dy = ys - cy
    dx = xs - cx
    # sweep the ellipse straight down over [0, flow]
    dy = dy - np.clip(dy, 0.0, flow)
    c, s = math.cos(theta), math.sin(theta)
    u = (c * dx + s * dy) / semi_a
    v = (-s * dx + c * dy) / semi_b
    dist = np.sqrt(u * u + v * v)
    alpha = np.clip((1.0 - dist) / EDGE_SOFTNESS, 0.0, 1.0)
    # 8-bit grid so that mask == 0 on disk iff the pixel is untouched
    return np.round(alpha * 255.0) / 255.0, flow


def _refracted(clean, ys, xs, cy, cx, blur_sigma):
    src_y = cy - (ys - cy) * REFRACTION_SCALE
    src_x = cx + (xs - cx) * REFRACTION_SCALE
    out = np.empty((clean.shape[0],) + ys.shape, dtype=np.float64)
    for ch in range(clean.shape[0]):
        out[ch] = ndimage.map_coordinates(clean[ch], [src_y, src_x], order=1, mode="reflect")
        if blur_sigma > 0:
            out[ch] = ndimage.gaussian_filter(out[ch], blur_sigma, mode="nearest")
    return np.clip(out + BRIGHTNESS_LIFT, 0.0, 1.0)


def synthesize(clean, preset, seed: int) -> PairedSample:
    """Composite raindrops onto ``clean`` (C,H,W in [0,1]); deterministic in (clean, preset, seed)."""
    preset = get_preset(preset)
    base = np.asarray(clean, dtype=np.float64)
    if base.ndim != 3 or base.shape[0] not in (1, 3):
        raise DimensionError(f"expected (1|3,H,W) image, got shape {base.shape}")
    _, h, w = base.shape
    if min(h, w) < MIN_SIDE:
        raise DimensionError(f"image sides must be >= {MIN_SIDE}, got {h}x{w}")
    base = np.clip(base, 0.0, 1.0)
    rng = np.random.default_rng(seed)
    n = _drop_count(rng, preset, h * w)

    rain = base.copy()
    keep = np.ones((h, w))  # product of (1 - alpha) over drops
    for _ in range(n):
        radius = rng.uniform(*preset.radius_range)
        cy = rng.uniform(0, h - 1)
        cx = rng.uniform(0, w - 1)
        reach = int(math.ceil(radius * 1.3 + 1))
        reach_down = int(math.ceil(radius * 1.3 * 5 + 1))
        y0, y1 = max(0, int(cy) - reach), min(h, int(cy) + reach_down + 1)
        x0, x1 = max(0, int(cx) - reach), min(w, int(cx) + reach + 1)
        ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        alpha, _ = _drop_alpha(rng, preset, ys, xs, cy, cx, radius)
        if not alpha.any():
            continue
        content = _refracted(base, ys, xs, cy, cx, preset.blur_sigma)
        region = rain[:, y0:y1, x0:x1]
        mixed = region * (1.0 - alpha) + content * alpha
        rain[:, y0:y1, x0:x1] = np.where(alpha > 0, mixed, region)
        keep[y0:y1, x0:x1] *= 1.0 - alpha

    mask = 1.0 - keep
    dtype = np.asarray(clean).dtype if np.issubdtype(np.asarray(clean).dtype, np.floating) else np.float32
    return PairedSample(
        rain=np.clip(rain, 0.0, 1.0).astype(dtype),
        clean=base.astype(dtype),
        drop_mask=mask[None].astype(dtype),
        seed=int(seed),
        drop_count=n,
        meta={"preset": preset.name},
    )


def index_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def toy_scene(size: int = 128, seed: int = 0, channels: int = 3) -> np.ndarray:
    """Procedural clean image: smooth background gradient plus random flat shapes."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.empty((channels, size, size))
    for ch in range(channels):
        a, b, c = rng.uniform(-0.4, 0.4, 3)
        img[ch] = 0.5 + a * ys + b * xs + c * ys * xs
    for _ in range(rng.integers(6, 14)):
        color = rng.uniform(0.0, 1.0, channels)[:, None, None]
        cy, cx = rng.uniform(0, 1, 2)
        if rng.random() < 0.5:
            hh, ww = rng.uniform(0.05, 0.3, 2)
            inside = (np.abs(ys - cy) < hh) & (np.abs(xs - cx) < ww)
        else:
            r = rng.uniform(0.05, 0.25)
            inside = (ys - cy) ** 2 + (xs - cx) ** 2 < r * r
        img = np.where(inside[None], color, img)
    stripes = 0.08 * np.sin(2 * np.pi * rng.uniform(2, 8) * (xs + rng.uniform() * ys))
    img = img + stripes[None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def build_dataset(clean_dir, out_dir, preset, n: int, seed: int) -> Path:
    """Write ``n`` rain/clean/mask PNG triples plus ``manifest.csv``; returns the manifest path."""
    preset = get_preset(preset)
    clean_dir, out_dir = Path(clean_dir), Path(out_dir)
    sources = sorted(clean_dir.glob("*.png")) if clean_dir.is_dir() else []
    if not sources:
        raise InputError(f"no PNG images found in {clean_dir}")
    try:
        for sub in ("rain", "clean", "mask"):
            (out_dir / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out_dir}: {exc}") from exc

    images = {}
    rows = []
    for i in range(n):
        src = sources[i % len(sources)]
        if src not in images:
            images[src] = imaging.load_png(src)
        s = index_seed(seed, i)
        sample = synthesize(images[src], preset, s)
        name = f"{i:05d}.png"
        imaging.save_png(out_dir / "rain" / name, sample.rain)
        imaging.save_png(out_dir / "clean" / name, sample.clean)
        imaging.save_png(out_dir / "mask" / name, sample.drop_mask)
        rows.append((i, src.name, s, preset.name))

    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)
    return manifest


def read_manifest(root) -> list[dict]:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise InputError(f"no {MANIFEST_NAME} in {root}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise InputError(f"unexpected manifest columns {reader.fieldnames}")
        rows = []
        for row in reader:
            idx = int(row["index"])
            rows.append({
                "index": idx,
                "clean_source": row["clean_source"],
                "seed": int(row["seed"]),
                "preset": row["preset"],
                "rain": root / "rain" / f"{idx:05d}.png",
                "clean": root / "clean" / f"{idx:05d}.png",
                "mask": root / "mask" / f"{idx:05d}.png",
            })
    return rows


def with_counts(preset, lo: int, hi: int) -> RainPreset:
    return replace(get_preset(preset), drop_count_range=(lo, hi))
