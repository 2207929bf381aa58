"""Variant ladder: train each configuration and tabulate PSNR/SSIM per preset."""
from __future__ import annotations

import csv
import io
import logging
import math
from pathlib import Path

from .config import LADDER, TrainConfig, get_variant
from .data import PRESET_ORDER, PairedImages, discover_datasets
from .evaluate import score_images, summarize
from .train import Derainer, save_state, train_estnet, train_gan

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("method",) + tuple(f"{p}_{m}" for p in PRESET_ORDER for m in ("psnr", "ssim"))
RAINY_ROW = "Rainy"


def _load(paths) -> PairedImages:
    roots = [paths] if isinstance(paths, (str, Path)) else list(paths)
    return PairedImages.load([d for root in roots for d in discover_datasets(root)])


def table_row(method, means) -> list[str]:
    row = [method]
    for preset in PRESET_ORDER:
        if preset in means:
            row += [f"{means[preset][0]:.4f}", f"{means[preset][1]:.4f}"]
        else:
            row += ["", ""]
    return row


def render_table(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()


def run_ablation(train_data, test_data, variants=LADDER, config: TrainConfig | None = None,
                 report=None, work_dir=None, include_rainy: bool = False) -> str:
    """Train every variant in ``variants`` on ``train_data`` and score it on ``test_data``.

    One EstNet is trained up front and shared by all prior-conditioned
    variants.  Returns the CSV text (also written to ``report`` if given);
    checkpoints go to ``work_dir`` if given.
    """
    config = config or TrainConfig()
    variants = [get_variant(v).tag for v in variants]
    train = _load(train_data)
    test = _load(test_data)
    work = Path(work_dir) if work_dir is not None else None

    rows = []
    if include_rainy:
        rows.append(table_row(RAINY_ROW, summarize(score_images(None, test))))
    estnet = None
    if any(get_variant(v).attention is not None for v in variants):
        log.info("training shared EstNet for %d steps", config.est_steps)
        estnet = train_estnet(train, config, out=work / "estnet.ufg" if work else None)
    for tag in variants:
        cfg = config.with_updates(variant=tag)
        log.info("training variant %s", tag)
        state = train_gan(train, estnet, cfg)
        if work is not None:
            save_state(state, work / f"{tag.replace('+', '_')}.ufg")
        means = summarize(score_images(Derainer(state.generator, state.estnet), test))
        if not all(math.isfinite(v) for pair in means.values() for v in pair):
            log.warning("variant %s produced non-finite metrics", tag)
        rows.append(table_row(tag, means))
    text = render_table(rows)
    if report is not None:
        report = Path(report)
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(text)
    return text


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
