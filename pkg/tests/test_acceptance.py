"""End-to-end acceptance checks, one test per criterion.

Each test records a verdict through ``acceptance_log.criterion``; the
conftest prints them as one PASS/FAIL line per criterion after the run.
"""
import json
import math
import time

import numpy as np
import pytest
import torch

from dropgan import cli, imaging
from dropgan.ablation import TABLE_COLUMNS, read_table, run_ablation
from dropgan.blocks import spectral_norm_modules
from dropgan.config import LADDER, TrainConfig
from dropgan.data import PRESET_ORDER
from dropgan.evaluate import MEAN_ROW, evaluate, read_report
from dropgan.losses import d_loss, g_adv_loss, unfair_fake
from dropgan.networks import Critic, CriticConfig
from dropgan.rain_synth import build_dataset, toy_scene
from dropgan.train import Derainer, train_estnet, train_gan

import oracles
import test_blocks
import test_losses
import test_networks
from acceptance_log import criterion
from helpers import make_scenes, tiny_config

EXACT = 1e-12


@pytest.fixture(scope="module")
def smoke_data(tmp_path_factory):
    """64 moderate training pairs and 16 held-out pairs of 128x128 toy scenes."""
    root = tmp_path_factory.mktemp("smoke")
    make_scenes(root / "clean_train", 64, 128)
    make_scenes(root / "clean_test", 16, 128, offset=1000)
    build_dataset(root / "clean_train", root / "train", "moderate", 64, 7)
    build_dataset(root / "clean_test", root / "test" / "moderate", "moderate", 16, 1007)
    return root


def test_criterion_1_loss_formulas():
    with criterion(1, "loss-formula fidelity to 1e-12") as notes:
        assert d_loss([1.0], [0.0]).item() == 0.0
        for c in (-3.0, 0.0, 0.7, 12.5):
            assert abs(d_loss([c, c], [c]).item() - 2.0) <= EXACT
        assert g_adv_loss([1.0], [0.0]).item() == 0.0
        for c in (-3.0, 0.0, 0.7, 12.5):
            assert abs(g_adv_loss([c], [c, c]).item() - 2.0) <= EXACT
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(200):
            a = rng.normal(size=rng.integers(1, 6)) * 5
            b = rng.normal(size=rng.integers(1, 6)) * 5
            worst = max(worst, abs(d_loss(a, b).item() - g_adv_loss(a, b).item()))
        assert worst <= EXACT
        notes.append(f"mirror max diff {worst:.1e}")


def test_criterion_2_unfair_fake_trials():
    with criterion(2, "unfair-fake betweenness and endpoints over 1000 trials"):
        gen = torch.Generator().manual_seed(0)
        for _ in range(1000):
            x_f = torch.rand(2, 3, 4, 4, generator=gen, dtype=torch.float64)
            x_r = torch.rand(2, 3, 4, 4, generator=gen, dtype=torch.float64)
            star = unfair_fake(x_f, x_r, generator=gen).x_f_star
            assert (star >= torch.minimum(x_f, x_r)).all() and (star <= torch.maximum(x_f, x_r)).all()
            assert torch.equal(unfair_fake(x_f, x_r, mu=0.0).x_f_star, x_f)
            assert torch.equal(unfair_fake(x_f, x_r, mu=1.0, eta=1.0).x_f_star, x_r)


GRADIENT_CHECKS = [
    test_blocks.test_drdb_gradients_match_finite_differences,
    test_blocks.test_daf_gradients_match_finite_differences,
    test_blocks.test_aam_gradients_match_finite_differences,
    test_blocks.test_auam_gradients_match_finite_differences,
    test_networks.test_generator_gradient_probe_subset,
    test_losses.test_l1_gradient,
    test_losses.test_ms_ssim_gradient,
    test_losses.test_perceptual_gradient,
    test_losses.test_adversarial_gradient,
]


def test_criterion_3_gradient_suite():
    with criterion(3, "finite-difference gradient suite under 2 min") as notes:
        start = time.perf_counter()
        for check in GRADIENT_CHECKS:
            check()
        elapsed = time.perf_counter() - start
        notes.append(f"{len(GRADIENT_CHECKS)} checks in {elapsed:.1f}s")
        assert elapsed < 120


def test_criterion_4_metric_oracles():
    with criterion(4, "PSNR/SSIM/MS-SSIM vs loop oracles on 10 pairs at 1e-6") as notes:
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            a = toy_scene(192, seed).astype(np.float64)
            b = np.clip(a + rng.uniform(-0.15, 0.15, a.shape), 0, 1)
            worst = max(worst,
                        abs(imaging.psnr(a, b) - oracles.psnr_loop(a, b)),
                        abs(imaging.ssim(a, b) - oracles.ssim_windowed(a, b)),
                        abs(float(imaging.ms_ssim(a, b)) - oracles.ms_ssim_by_scale(a, b)))
        notes.append(f"max diff {worst:.1e}")
        assert worst < 1e-6


def test_criterion_5_critic_spectral_norms():
    with criterion(5, "default critic conv spectral norms in [0.98, 1.02]") as notes:
        torch.manual_seed(0)
        critic = Critic(CriticConfig()).train()
        x = torch.rand(2, 3, 32, 32)
        m_r, m_e = torch.rand(2, 3, 32, 32) * 2 - 1, torch.rand(2, 1, 32, 32)
        with torch.no_grad():
            for _ in range(20):
                critic(x, m_r, m_e)
        critic.eval()
        tops = []
        for _, conv in spectral_norm_modules(critic):
            w = conv.weight.detach()
            tops.append(torch.linalg.svdvals(w.reshape(w.shape[0], -1).double())[0].item())
        assert len(tops) == sum(isinstance(m, torch.nn.Conv2d) for m in critic.modules())
        notes.append(f"{len(tops)} convs, range [{min(tops):.4f}, {max(tops):.4f}]")
        assert all(0.98 <= t <= 1.02 for t in tops)


def test_criterion_6_architectural_identity():
    with criterion(6, "identity at init and attention-free G == EstNet bitwise"):
        test_networks.test_generator_is_identity_at_init()
        test_networks.test_estnet_is_identity_at_init()
        test_networks.test_attention_free_generator_equals_estnet_bitwise()


def mean_psnr(report):
    rows = [r for r in read_report(report) if r["image"] == MEAN_ROW]
    assert len(rows) == 1
    return float(rows[0]["psnr"])


def test_criterion_7_smoke_training(smoke_data, tmp_path):
    with criterion(7, "smoke run: +2 dB over rainy input, finite losses, <= 15 min") as notes:
        # a narrower critic than the default keeps the run within the CPU budget
        cfg = TrainConfig(base_channels=16, critic_widths=[32, 64, 128, 256], est_steps=200,
                          gan_steps=200, log_every=0)
        start = time.perf_counter()
        est = train_estnet(smoke_data / "train", cfg)
        state = train_gan(smoke_data / "train", est, cfg)
        elapsed = time.perf_counter() - start
        evaluate(None, smoke_data / "test", tmp_path / "rainy.csv")
        evaluate(Derainer(state.generator, state.estnet), smoke_data / "test", tmp_path / "gan.csv")
        rainy, derained = mean_psnr(tmp_path / "rainy.csv"), mean_psnr(tmp_path / "gan.csv")
        finite = all(math.isfinite(v) for r in est.history + state.history for v in r.values())
        notes.append(f"rainy {rainy:.3f} dB, derained {derained:.3f} dB, gain {derained - rainy:+.3f} dB, "
                     f"{elapsed / 60:.1f} min, finite={finite}")
        assert finite
        assert elapsed <= 15 * 60
        assert derained - rainy >= 2.0


def test_criterion_8_ablation_table(smoke_data, tmp_path):
    with criterion(8, "ablation CSV for the full ladder, all presets, finite"):
        test_root = tmp_path / "test"
        for k, preset in enumerate(PRESET_ORDER):
            build_dataset(smoke_data / "clean_test", test_root / preset, preset, 4, 300 + k)
        cfg = tiny_config(est_steps=10, gan_steps=10)
        report = tmp_path / "ablation.csv"
        run_ablation(smoke_data / "train", test_root, LADDER, cfg, report=report, include_rainy=True)
        assert report.read_text().splitlines()[0] == ",".join(TABLE_COLUMNS)
        rows = read_table(report)
        assert [r["method"] for r in rows] == ["Rainy", *LADDER]
        for row in rows:
            assert all(math.isfinite(float(row[c])) for c in TABLE_COLUMNS[1:])


def smoke_pipeline(root, config_path):
    steps = [
        ["scenes", "--out", root / "clean", "--n", "6", "--size", "64", "--seed", "5"],
        ["synth", "--clean-dir", root / "clean", "--out", root / "data", "--n", "8", "--seed", "3"],
        ["train-est", "--data", root / "data", "--config", config_path, "--out", root / "est.ufg"],
        ["train-gan", "--data", root / "data", "--estnet", root / "est.ufg", "--config", config_path,
         "--out", root / "gan.ufg"],
        ["eval", "--ckpt", root / "gan.ufg", "--data", root / "data", "--report", root / "report.csv"],
    ]
    for argv in steps:
        assert cli.main([str(a) for a in argv]) == 0
    return [(root / name).read_bytes() for name in ("est.ufg", "gan.ufg", "report.csv")]


def test_criterion_9_determinism(tmp_path):
    with criterion(9, "two same-seed runs give identical checkpoints and reports"):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(tiny_config(est_steps=6, gan_steps=6, threads=1).to_dict()))
        first = smoke_pipeline(tmp_path / "a", config_path)
        second = smoke_pipeline(tmp_path / "b", config_path)
        assert first == second
        assert read_report(tmp_path / "a" / "report.csv")
