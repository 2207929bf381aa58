"""In-memory paired datasets read from the synthetic dataset layout."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from . import imaging
from .errors import DimensionError, InputError
from .rain_synth import MANIFEST_NAME, read_manifest

PRESET_ORDER = ("heavy", "moderate", "light")


def discover_datasets(path) -> list[Path]:
    """``path`` itself if it holds a manifest, else its immediate subdirectories that do."""
    path = Path(path)
    if (path / MANIFEST_NAME).is_file():
        return [path]
    found = sorted(p for p in path.iterdir() if (p / MANIFEST_NAME).is_file()) if path.is_dir() else []
    if not found:
        raise InputError(f"no dataset (directory with {MANIFEST_NAME}) at {path}")
    return found


class PairedImages:
    def __init__(self, rain, clean, names, presets):
        if not rain:
            raise InputError("dataset is empty")
        self.rain = rain
        self.clean = clean
        self.names = names
        self.presets = presets

    @classmethod
    def load(cls, roots) -> "PairedImages":
        if isinstance(roots, (str, Path)):
            roots = [roots]
        rain, clean, names, presets = [], [], [], []
        for root in roots:
            for row in read_manifest(root):
                r = imaging.load_png(row["rain"])
                c = imaging.load_png(row["clean"])
                if r.shape != c.shape:
                    raise InputError(f"{row['rain']} and {row['clean']} differ in shape")
                rain.append(r)
                clean.append(c)
                names.append(f"{Path(root).name}/{row['index']:05d}")
                presets.append(row["preset"])
        return cls(rain, clean, names, presets)

    def __len__(self):
        return len(self.rain)

    def sample_batch(self, rng: np.random.Generator, batch_size: int, patch_size: int):
        """Random aligned crops; returns float32 ``(rain, clean)`` tensors (B,C,P,P)."""
        rains, cleans = [], []
        for idx in rng.integers(0, len(self), size=batch_size):
            r, c = self.rain[idx], self.clean[idx]
            _, h, w = r.shape
            if h < patch_size or w < patch_size:
                raise DimensionError(f"image {self.names[idx]} ({h}x{w}) is smaller than patch {patch_size}")
            y = int(rng.integers(0, h - patch_size + 1))
            x = int(rng.integers(0, w - patch_size + 1))
            rains.append(r[:, y:y + patch_size, x:x + patch_size])
            cleans.append(c[:, y:y + patch_size, x:x + patch_size])
        return torch.from_numpy(np.stack(rains)), torch.from_numpy(np.stack(cleans))
