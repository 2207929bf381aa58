"""Full-image PSNR/SSIM reports grouped by rain preset."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
import torch

from . import imaging
from .data import PRESET_ORDER, PairedImages, discover_datasets
from .train import Derainer

REPORT_COLUMNS = ("preset", "image", "psnr", "ssim")
MEAN_ROW = "MEAN"


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def preset_rank(name: str):
    return (PRESET_ORDER.index(name), "") if name in PRESET_ORDER else (len(PRESET_ORDER), name)


def as_derainer(model) -> Derainer:
    """Accepts a Derainer, a checkpoint path, or None (the identity model)."""
    if model is None:
        return Derainer()
    if isinstance(model, Derainer):
        return model
    return Derainer.from_checkpoint(model)


def score_images(model, data) -> list[dict]:
    """Per-image metrics of ``model`` on ``data`` (paths or a PairedImages)."""
    derainer = as_derainer(model)
    if not isinstance(data, PairedImages):
        roots = [data] if isinstance(data, (str, Path)) else list(data)
        data = PairedImages.load([d for root in roots for d in discover_datasets(root)])
    rows = []
    for rain, clean, name, preset in zip(data.rain, data.clean, data.names, data.presets):
        out = derainer(torch.from_numpy(rain))
        rows.append({"preset": preset, "image": name,
                     "psnr": imaging.psnr(out, clean), "ssim": imaging.ssim(out, clean)})
    return rows


def summarize(rows) -> dict:
    """``{preset: (mean_psnr, mean_ssim)}`` in report order."""
    groups = {}
    for row in rows:
        groups.setdefault(row["preset"], []).append(row)
    return {p: (float(np.mean([r["psnr"] for r in groups[p]])), float(np.mean([r["ssim"] for r in groups[p]])))
            for p in sorted(groups, key=preset_rank)}


def render_report(rows) -> str:
    """CSV text: per-image rows grouped by preset, each group closed by its mean row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    means = summarize(rows)
    for preset, (psnr, ssim) in means.items():
        for row in sorted((r for r in rows if r["preset"] == preset), key=lambda r: r["image"]):
            writer.writerow([preset, row["image"], _fmt(row["psnr"]), _fmt(row["ssim"])])
        writer.writerow([preset, MEAN_ROW, _fmt(psnr), _fmt(ssim)])
    return buf.getvalue()


def evaluate(model, test_dir, report=None) -> str:
    """Score ``model`` on every dataset under ``test_dir``; optionally write the CSV to ``report``."""
    text = render_report(score_images(model, test_dir))
    if report is not None:
        report = Path(report)
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(text)
    return text


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"preset": r["preset"], "image": r["image"], "psnr": float(r["psnr"]), "ssim": float(r["ssim"])}
                for r in csv.DictReader(fh)]
