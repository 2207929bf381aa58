"""Staged training: EstNet on L1 first, then the adversarial generator/critic game."""
from __future__ import annotations

import base64
import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint
from .config import TrainConfig
from .data import PairedImages
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .lookahead import Lookahead
from .losses import (FeatureExtractor, d_loss, estnet_loss, g_adv_loss, generator_loss,
                     standard_d_loss, standard_g_adv_loss, unfair_fake)
from .networks import Critic, DRDUNet, GeneratorConfig, build_estnet, build_generator
from .priors import edge_map, rain_map

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    config: TrainConfig
    kind: str  # "estnet" or "gan"
    estnet: DRDUNet | None = None
    generator: DRDUNet | None = None
    critic: Critic | None = None
    optimizers: dict = field(default_factory=dict)
    step: int = 0
    data_rng: np.random.Generator | None = None
    noise_gen: torch.Generator | None = None
    history: list = field(default_factory=list)

    def modules(self):
        return {name: m for name, m in (("estnet", self.estnet), ("generator", self.generator),
                                        ("critic", self.critic)) if m is not None}

    def checkpoint_config(self) -> dict:
        return {"kind": self.kind, "train": self.config.to_dict(),
                "estnet": self.estnet.cfg.to_dict() if self.estnet is not None else None}


def configure_threads(cfg: TrainConfig):
    if cfg.threads:
        torch.set_num_threads(cfg.threads)


def make_optimizer(module: torch.nn.Module, cfg: TrainConfig) -> Lookahead:
    params = [p for p in module.parameters() if p.requires_grad]
    inner = torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    return Lookahead(inner, k=cfg.lookahead_k, alpha=cfg.lookahead_alpha)


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    module.requires_grad_(False)
    module.eval()
    return module


def compute_priors(rain: torch.Tensor, estnet: DRDUNet | None):
    """Rain residual from a frozen EstNet and the edge map of the rain input."""
    with torch.no_grad():
        m_r = rain_map(rain, estnet).to(rain.dtype) if estnet is not None else None
        m_e = edge_map(rain).to(rain.dtype)
    return m_r, m_e


def _finite(values: dict) -> bool:
    return all(math.isfinite(v) for v in values.values())


def _dump(out_dir, step, **tensors) -> Path:
    out_dir = Path(out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"nan_dump_step{step:06d}.npz"
    np.savez(path, **{k: v.detach().cpu().numpy() for k, v in tensors.items() if v is not None})
    return path


def _abort(step, losses, dump_dir, **tensors):
    path = _dump(dump_dir, step, **tensors)
    raise TrainingDivergedError(f"non-finite loss at step {step}: {losses}; last batch saved to {path}", path)


def _rng_state(state: TrainState) -> dict:
    meta = {}
    if state.data_rng is not None:
        meta["data_rng"] = state.data_rng.bit_generator.state
    if state.noise_gen is not None:
        meta["noise_gen"] = base64.b64encode(state.noise_gen.get_state().numpy().tobytes()).decode("ascii")
    return meta


def save_state(state: TrainState, path) -> Path:
    arrays = {}
    for name, module in state.modules().items():
        arrays.update(checkpoint.module_arrays(module, name))
    for name, opt in state.optimizers.items():
        arrays.update(opt.state_arrays(f"opt.{name}"))
    meta = {"step": state.step, "history": state.history,
            "optimizer_steps": {k: o.step_count for k, o in state.optimizers.items()}, **_rng_state(state)}
    return checkpoint.save(path, state.checkpoint_config(), arrays, meta)


def _module_cfg(d):
    return GeneratorConfig.from_dict(d)


def load_state(path, expected: TrainState | None = None) -> TrainState:
    """Rebuild a :class:`TrainState` from a checkpoint file.

    With ``expected`` the stored config digest must match its config.
    """
    expected_cfg = expected.checkpoint_config() if expected is not None else None
    cfg_dict, arrays, meta = checkpoint.load(path, expected_cfg)
    cfg = TrainConfig.from_dict(cfg_dict["train"])
    kind = cfg_dict["kind"]
    state = TrainState(cfg, kind, step=meta["step"], history=meta.get("history", []))
    if cfg_dict.get("estnet") is not None:
        state.estnet = DRDUNet(_module_cfg(cfg_dict["estnet"]))
        checkpoint.load_module(state.estnet, arrays, "estnet")
    if kind == "gan":
        state.generator = build_generator(cfg.generator_config())
        checkpoint.load_module(state.generator, arrays, "generator")
        if any(k.startswith("critic.") for k in arrays):
            state.critic = Critic(cfg.critic_config())
            checkpoint.load_module(state.critic, arrays, "critic")
    trainable = {"estnet": state.estnet} if kind == "estnet" else {"generator": state.generator, "critic": state.critic}
    for name, module in trainable.items():
        if module is not None and any(k.startswith(f"opt.{name}.") for k in arrays):
            opt = make_optimizer(module, cfg)
            opt.load_state_arrays(arrays, f"opt.{name}", meta["optimizer_steps"][name])
            state.optimizers[name] = opt
    if kind == "gan" and state.estnet is not None:
        freeze(state.estnet)
    if "data_rng" in meta:
        state.data_rng = np.random.default_rng()
        state.data_rng.bit_generator.state = meta["data_rng"]
    if "noise_gen" in meta:
        state.noise_gen = torch.Generator()
        raw = np.frombuffer(base64.b64decode(meta["noise_gen"]), dtype=np.uint8).copy()
        state.noise_gen.set_state(torch.from_numpy(raw))
    return state


def _dataset(data) -> PairedImages:
    return data if isinstance(data, PairedImages) else PairedImages.load(data)


def train_estnet(data, config: TrainConfig, out=None) -> TrainState:
    """Fit EstNet with L1 on random patches; saves a checkpoint to ``out`` if given."""
    cfg = config
    configure_threads(cfg)
    dataset = _dataset(data)
    torch.manual_seed(cfg.seed)
    estnet = build_estnet(cfg.estnet_config())
    opt = make_optimizer(estnet, cfg)
    state = TrainState(cfg, "estnet", estnet=estnet, optimizers={"estnet": opt},
                       data_rng=np.random.default_rng(cfg.seed))
    estnet.train()
    for step in range(1, cfg.est_steps + 1):
        rain, clean = dataset.sample_batch(state.data_rng, cfg.batch_size, cfg.patch_size)
        loss = estnet_loss(estnet(rain), clean)
        record = {"step": step, "l1": loss.item()}
        if not _finite(record):
            _abort(step, record, Path(out).parent if out else None, rain=rain, clean=clean)
        opt.zero_grad()
        loss.backward()
        opt.step()
        state.step = step
        state.history.append(record)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("estnet step %d  l1 %.5f", step, record["l1"])
    if out is not None:
        save_state(state, out)
    return state


def _load_estnet(estnet_ckpt) -> DRDUNet:
    if isinstance(estnet_ckpt, DRDUNet):
        return estnet_ckpt
    if isinstance(estnet_ckpt, TrainState):
        return estnet_ckpt.estnet
    state = load_state(estnet_ckpt)
    if state.estnet is None:
        raise CheckpointError(f"{estnet_ckpt} holds no EstNet")
    return state.estnet


def train_gan(data, estnet_ckpt, config: TrainConfig, out=None) -> TrainState:
    """Adversarial stage.

    Per step: priors from the frozen EstNet and the edge extractor, generator
    forward, unfair fake for the critic update, critic step, generator step.
    Both optimizers are Lookahead-wrapped; updates alternate 1:1.  Variants
    without a critic train the generator on the reconstruction terms only.
    """
    cfg = config
    variant = cfg.variant_spec
    configure_threads(cfg)
    dataset = _dataset(data)
    estnet = None
    if variant.attention is not None:
        if estnet_ckpt is None:
            raise ConfigError(f"variant {cfg.variant} needs an EstNet checkpoint for its rain prior")
        estnet = freeze(_copy_module(_load_estnet(estnet_ckpt)))

    torch.manual_seed(cfg.seed)
    generator = build_generator(cfg.generator_config())
    critic = Critic(cfg.critic_config()) if variant.adversarial is not None else None
    optimizers = {"generator": make_optimizer(generator, cfg)}
    if critic is not None:
        optimizers["critic"] = make_optimizer(critic, cfg)
    extractor = FeatureExtractor(seed=cfg.extractor_seed)
    weights = cfg.weights
    state = TrainState(cfg, "gan", estnet=estnet, generator=generator, critic=critic,
                       optimizers=optimizers, data_rng=np.random.default_rng(cfg.seed),
                       noise_gen=torch.Generator().manual_seed(cfg.seed))
    unfair = variant.adversarial == "unfair"
    d_fn = d_loss if unfair else standard_d_loss
    g_fn = g_adv_loss if unfair else standard_g_adv_loss
    dump_dir = Path(out).parent if out else None

    generator.train()
    if critic is not None:
        critic.train()
    for step in range(1, cfg.gan_steps + 1):
        rain, clean = dataset.sample_batch(state.data_rng, cfg.batch_size, cfg.patch_size)
        m_r, m_e = compute_priors(rain, estnet)
        x_f = generator(rain, m_r, m_e)
        record = {"step": step}

        if critic is not None and cfg.update_critic:
            fake = unfair_fake(x_f, clean, state.noise_gen, per_image_mu=cfg.per_image_mu).x_f_star if unfair else x_f.detach()
            loss_d = d_fn(critic(clean, m_r, m_e), critic(fake, m_r, m_e))
            record["d_loss"] = loss_d.item()
            if not _finite(record):
                _abort(step, record, dump_dir, rain=rain, clean=clean, x_f=x_f)
            optimizers["critic"].zero_grad()
            loss_d.backward()
            optimizers["critic"].step()

        c_f = c_r = None
        if critic is not None and weights.adversarial > 0:
            c_f = critic(x_f, m_r, m_e)
            c_r = critic(clean, m_r, m_e)
        loss_g, parts = generator_loss(x_f, clean, c_f, c_r, weights, extractor, adversarial=g_fn)
        record["g_loss"] = loss_g.item()
        record.update({k: v.item() for k, v in parts.items()})
        if not _finite(record):
            _abort(step, record, dump_dir, rain=rain, clean=clean, x_f=x_f)
        optimizers["generator"].zero_grad()
        loss_g.backward()
        optimizers["generator"].step()
        if critic is not None:
            # the generator step also filled critic grads; they must not leak into its next update
            optimizers["critic"].zero_grad()

        state.step = step
        state.history.append(record)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("gan step %d  %s", step, "  ".join(f"{k} {v:.5f}" for k, v in record.items() if k != "step"))
    if out is not None:
        save_state(state, out)
    return state


def _copy_module(module: DRDUNet) -> DRDUNet:
    # deepcopy rather than rebuild: construction would consume the global RNG
    return copy.deepcopy(module)


class Derainer:
    """Applies a trained generator (or the identity) to full-size images.

    Inputs are reflect-padded up to a multiple of the UNet stride and
    cropped back afterwards.
    """

    def __init__(self, generator: DRDUNet | None = None, estnet: DRDUNet | None = None):
        # private frozen copies: the caller's modules keep training untouched
        self.generator = freeze(_copy_module(generator)) if generator is not None else None
        self.estnet = freeze(_copy_module(estnet)) if estnet is not None else None
        if self.generator is not None and self.generator.cfg.use_attention and self.estnet is None:
            raise ConfigError("prior-conditioned generator needs an EstNet")

    @classmethod
    def from_checkpoint(cls, path) -> "Derainer":
        state = load_state(path)
        if state.kind == "estnet":
            return cls(state.estnet)
        return cls(state.generator, state.estnet)

    def __call__(self, rain: torch.Tensor) -> torch.Tensor:
        single = rain.dim() == 3
        x = rain.unsqueeze(0) if single else rain
        x = x.float()
        if self.generator is None:
            out = x
        else:
            m = self.generator.multiple
            h, w = x.shape[-2:]
            ph, pw = (-h) % m, (-w) % m
            padded = F.pad(x, (0, pw, 0, ph), mode="reflect") if ph or pw else x
            with torch.no_grad():
                m_r, m_e = (compute_priors(padded, self.estnet) if self.generator.cfg.use_attention
                            else (None, None))
                out = self.generator(padded, m_r, m_e)[..., :h, :w]
        return out[0] if single else out
