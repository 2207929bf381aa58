"""Lookahead wrapper: slow weights trail the inner optimizer's fast weights."""
from __future__ import annotations

import torch

from .errors import ConfigError


def lookahead_step(fast, slow, k: int, alpha: float, step: int):
    """Every ``k``-th step pull ``slow`` toward ``fast`` by ``alpha`` and reset ``fast``.

    Operates in place on sequences of tensors and returns them.
    """
    if k < 1:
        raise ConfigError(f"lookahead k must be >= 1, got {k}")
    if step < 1:
        raise ValueError(f"step counts from 1, got {step}")
    if step % k == 0:
        with torch.no_grad():
            for f, s in zip(fast, slow):
                # lerp is exact at both endpoints (alpha = 0 or 1)
                s.lerp_(f, alpha)
                f.copy_(s)
    return fast, slow


class Lookahead:
    def __init__(self, optimizer: torch.optim.Optimizer, k: int = 5, alpha: float = 0.5):
        if k < 1:
            raise ConfigError(f"lookahead k must be >= 1, got {k}")
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"lookahead alpha must lie in [0, 1], got {alpha}")
        self.optimizer = optimizer
        self.k = k
        self.alpha = alpha
        self.step_count = 0
        self.slow = [p.detach().clone() for p in self.params]

    @property
    def params(self):
        return [p for group in self.optimizer.param_groups for p in group["params"]]

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=True)

    def step(self):
        self.optimizer.step()
        self.step_count += 1
        lookahead_step(self.params, self.slow, self.k, self.alpha, self.step_count)

    def state_arrays(self, prefix: str) -> dict:
        arrays = {}
        for i, (p, s) in enumerate(zip(self.params, self.slow)):
            arrays[f"{prefix}.slow.{i}"] = s
            for key, value in sorted(self.optimizer.state.get(p, {}).items()):
                arrays[f"{prefix}.{key}.{i}"] = value
        return arrays

    def load_state_arrays(self, arrays: dict, prefix: str, step_count: int) -> None:
        self.step_count = step_count
        for i, p in enumerate(self.params):
            self.slow[i].copy_(torch.from_numpy(arrays[f"{prefix}.slow.{i}"]))
            state = {}
            for key in ("step", "exp_avg", "exp_avg_sq"):
                name = f"{prefix}.{key}.{i}"
                if name in arrays:
                    state[key] = torch.from_numpy(arrays[name].copy()).to(p.dtype)
            if state:
                self.optimizer.state[p] = state
