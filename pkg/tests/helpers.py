"""Shared tiny configurations and scene folders for the test suite."""
from dropgan import imaging
from dropgan.config import TrainConfig
from dropgan.rain_synth import toy_scene


def make_scenes(root, n, size, offset=0):
    root.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        imaging.save_png(root / f"{i:03d}.png", toy_scene(size, offset + i))
    return root


def tiny_config(**changes):
    base = dict(patch_size=32, batch_size=2, est_steps=4, gan_steps=4, base_channels=4, depth=2, growth=4,
                drdb_layers=2, attention_width=4, critic_widths=[8, 16, 32, 32], log_every=0)
    base.update(changes)
    return TrainConfig(**base)
