"""Command line entry point: ``dropgan <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from . import imaging, rain_synth
from .config import LADDER, TrainConfig
from .errors import CheckpointError, ConfigError, DimensionError, InputError, TrainingDivergedError

log = logging.getLogger("dropgan")


def _config(path, **overrides) -> TrainConfig:
    cfg = TrainConfig.from_json(path) if path else TrainConfig()
    changes = {k: v for k, v in overrides.items() if v is not None}
    return cfg.with_updates(**changes) if changes else cfg


def cmd_scenes(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.n):
        imaging.save_png(out / f"scene{i:04d}.png", rain_synth.toy_scene(args.size, args.seed + i))
    print(f"wrote {args.n} scenes to {out}")


def cmd_synth(args):
    manifest = rain_synth.build_dataset(args.clean_dir, args.out, args.preset, args.n, args.seed)
    print(manifest)


def cmd_train_est(args):
    from .train import train_estnet

    cfg = _config(args.config, est_steps=args.steps)
    state = train_estnet(args.data, cfg, out=args.out)
    print(f"estnet: {state.step} steps -> {args.out}")


def cmd_train_gan(args):
    from .train import train_gan

    cfg = _config(args.config, gan_steps=args.steps, variant=args.variant)
    state = train_gan(args.data, args.estnet, cfg, out=args.out)
    print(f"{cfg.variant}: {state.step} steps -> {args.out}")


def cmd_derain(args):
    from .train import Derainer

    derainer = Derainer.from_checkpoint(args.ckpt)
    src, dst = Path(args.input), Path(args.out)
    files = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not files:
        raise InputError(f"no PNG images at {src}")
    for f in files:
        target = dst / f.name if src.is_dir() else dst
        with torch.no_grad():
            out = derainer(torch.from_numpy(imaging.load_png(f)))
        imaging.save_png(target, out.numpy())
    print(f"derained {len(files)} image(s) -> {dst}")


def cmd_eval(args):
    from .evaluate import evaluate

    text = evaluate(args.ckpt, args.data, args.report)
    if args.report is None:
        sys.stdout.write(text)


def cmd_ablate(args):
    from .ablation import run_ablation

    variants = [v.strip() for v in args.variants.split(",")] if args.variants else list(LADDER)
    cfg = _config(args.config)
    text = run_ablation(args.data, args.test, variants, cfg, report=args.report,
                        work_dir=args.work_dir, include_rainy=args.rainy)
    if args.report is None:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dropgan", description="Raindrop removal with prior-guided GANs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scenes", help="render procedural clean images")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_scenes)

    s = sub.add_parser("synth", help="composite raindrops onto clean images")
    s.add_argument("--clean-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--preset", choices=sorted(rain_synth.PRESETS), default="moderate")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-est", help="train the background estimator")
    s.add_argument("--data", required=True, nargs="+")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, help="override est_steps")
    s.set_defaults(func=cmd_train_est)

    s = sub.add_parser("train-gan", help="train the generator (and critic)")
    s.add_argument("--data", required=True, nargs="+")
    s.add_argument("--estnet", help="EstNet checkpoint (needed by prior-conditioned variants)")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, help="override gan_steps")
    s.add_argument("--variant", choices=LADDER)
    s.set_defaults(func=cmd_train_gan)

    s = sub.add_parser("derain", help="apply a checkpoint to a PNG or a directory of PNGs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_derain)

    s = sub.add_parser("eval", help="PSNR/SSIM report for a checkpoint (omit --ckpt for the rainy baseline)")
    s.add_argument("--ckpt")
    s.add_argument("--data", required=True, nargs="+")
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="train and score the variant ladder")
    s.add_argument("--data", required=True, nargs="+", help="training dataset(s)")
    s.add_argument("--test", required=True, nargs="+", help="test dataset(s)")
    s.add_argument("--variants", help=f"comma-separated subset of {','.join(LADDER)}")
    s.add_argument("--config")
    s.add_argument("--report")
    s.add_argument("--work-dir")
    s.add_argument("--rainy", action="store_true", help="prepend the identity baseline row")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc} (batch dumped to {exc.dump_path})", file=sys.stderr)
        return 3
    except (ConfigError, InputError, DimensionError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
