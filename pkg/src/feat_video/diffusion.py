"""DDPM noise schedule, forward marginal, epsilon-prediction loss, ancestral sampling, EMA.

Timesteps are 1-based: ``t = 1`` is the least noisy step and ``t = T`` the
last. ``alpha_bar(0) = 1`` by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import torch
from torch import nn

from .numerics import RngStream

__all__ = [
    "DiffusionSchedule",
    "make_schedule",
    "q_sample",
    "elbo_loss",
    "ddpm_step",
    "sample",
    "EmaState",
    "ema_update",
    "gaussian_optimal_denoiser",
]


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray  # float64, betas[t - 1] = beta_t

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(1.0 - self.betas)

    def _check(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [0, {self.T}]: {t}")
        return t

    def alpha_bar(self, t) -> np.ndarray:
        t = self._check(t)
        ab = np.concatenate([[1.0], self.alpha_bars])
        return ab[t]

    def alpha(self, t) -> np.ndarray:
        return np.sqrt(self.alpha_bar(t))

    def sigma(self, t) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar(t))

    def beta(self, t) -> np.ndarray:
        t = self._check(t)
        if np.any(t < 1):
            raise ValueError("beta is defined for t >= 1")
        return self.betas[t - 1]

    def posterior_variance(self, t) -> np.ndarray:
        """``beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)``; zero at t = 1."""
        t = np.asarray(t)
        return self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))


def make_schedule(T: int = 1000, beta_start: Optional[float] = None, beta_end: Optional[float] = None) -> DiffusionSchedule:
    """Linear beta schedule.

    Omitted bounds default to ``1e-4 * 1000 / T`` and ``2e-2 * 1000 / T``
    (the upper one capped at 0.999), which are the usual DDPM values at
    T = 1000 and keep the prior converged for short desk-scale chains.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    beta_start = min(1e-4 * 1000 / T, 0.5) if beta_start is None else beta_start
    beta_end = min(2e-2 * 1000 / T, 0.999) if beta_end is None else beta_end
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    return DiffusionSchedule(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def _per_sample(values: np.ndarray, like: torch.Tensor) -> torch.Tensor:
    v = torch.as_tensor(np.asarray(values), dtype=like.dtype, device=like.device)
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """``alpha_t x0 + sigma_t eps``; ``t`` is an int or one timestep per leading item."""
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != data shape {tuple(x0.shape)}")
    t = np.asarray(t)
    if np.any(t < 1):
        raise ValueError(f"timestep out of range [1, {schedule.T}]: {t}")
    return _per_sample(schedule.alpha(t), x0) * x0 + _per_sample(schedule.sigma(t), x0) * eps


def elbo_loss(
    model: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    x0: torch.Tensor,
    schedule: DiffusionSchedule,
    rng: RngStream,
) -> torch.Tensor:
    """Mean squared error between predicted and true noise.

    One timestep per clip is drawn uniformly from ``1..T``, then the noise,
    both from ``rng``.
    """
    B = x0.shape[0]
    t = rng.integers(1, schedule.T + 1, (B,))
    eps = torch.from_numpy(rng.normal(tuple(x0.shape))).to(x0.dtype)
    x_t = q_sample(x0, t, eps, schedule)
    pred = model(x_t, torch.from_numpy(t))
    loss = torch.mean((pred - eps) ** 2)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite diffusion loss {loss.item()} at timesteps {t.tolist()}")
    return loss


def ddpm_step(
    x_t: torch.Tensor, eps_hat: torch.Tensor, t: int, schedule: DiffusionSchedule, rng: Optional[RngStream]
) -> torch.Tensor:
    """One ancestral step ``x_t -> x_{t-1}``; no noise is added at ``t = 1``."""
    t = int(t)
    if t < 1:
        raise ValueError(f"ddpm_step needs t >= 1, got {t}")
    beta = float(schedule.beta(t))
    sigma = float(schedule.sigma(t))
    mean = (x_t - (beta / sigma) * eps_hat) / np.sqrt(1.0 - beta)
    if t == 1:
        return mean
    var = float(schedule.posterior_variance(t))
    z = torch.from_numpy(rng.normal(tuple(x_t.shape))).to(x_t.dtype)
    return mean + np.sqrt(var) * z


def sample(
    model: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    shape,
    schedule: DiffusionSchedule,
    rng: RngStream,
    ema: Optional["EmaState"] = None,
    dtype=torch.float32,
) -> torch.Tensor:
    """Ancestral sampling from pure noise.

    With ``ema`` given, ``model`` must be an ``nn.Module``; its weights are
    swapped for the EMA shadow for the duration of the chain.
    """
    x = torch.from_numpy(rng.normal(tuple(shape))).to(dtype)
    with torch.no_grad():
        if ema is not None:
            with ema.swapped_into(model):
                return _chain(model, x, schedule, rng)
        return _chain(model, x, schedule, rng)


def _chain(model, x, schedule, rng):
    batch = x.shape[0] if x.ndim > 0 else 1
    for t in range(schedule.T, 0, -1):
        eps_hat = model(x, torch.full((batch,), t, dtype=torch.long))
        x = ddpm_step(x, eps_hat, t, schedule, rng)
    return x


def gaussian_optimal_denoiser(schedule: DiffusionSchedule, data_std: float):
    """Exact ``E[eps | x_t]`` for data ``N(0, data_std^2)``."""

    def denoise(x_t: torch.Tensor, t) -> torch.Tensor:
        t = int(np.asarray(t).reshape(-1)[0])
        a2 = float(schedule.alpha_bar(t))
        s = float(schedule.sigma(t))
        return x_t * s / (a2 * data_std**2 + s**2)

    return denoise


@dataclass
class EmaState:
    """Exponential moving average of model parameters.

    With ``warmup`` the effective decay at optimiser step ``n`` is
    ``min(decay, (1 + n) / (10 + n))`` so short runs are not pinned to the
    initial weights.
    """

    decay: float = 0.9999
    shadow: dict = field(default_factory=dict)
    warmup: bool = False

    @classmethod
    def from_model(cls, model: nn.Module, decay: float = 0.9999, warmup: bool = False) -> "EmaState":
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"decay must lie in [0, 1), got {decay}")
        shadow = {k: v.detach().clone() for k, v in model.named_parameters()}
        return cls(decay=decay, shadow=shadow, warmup=warmup)

    def effective_decay(self, step: int) -> float:
        if self.warmup:
            return min(self.decay, (1.0 + step) / (10.0 + step))
        return self.decay

    def copy_to(self, model: nn.Module) -> None:
        params = dict(model.named_parameters())
        with torch.no_grad():
            for k, v in self.shadow.items():
                params[k].copy_(v)

    def swapped_into(self, model: nn.Module):
        return _Swap(self, model)


class _Swap:
    def __init__(self, ema, model):
        self.ema, self.model = ema, model

    def __enter__(self):
        self.saved = {k: v.detach().clone() for k, v in self.model.named_parameters()}
        self.ema.copy_to(self.model)
        return self.model

    def __exit__(self, *exc):
        params = dict(self.model.named_parameters())
        with torch.no_grad():
            for k, v in self.saved.items():
                params[k].copy_(v)
        return False


def ema_update(ema: EmaState, params: Union[nn.Module, dict], step: int) -> EmaState:
    """``shadow <- d * shadow + (1 - d) * params`` in place; returns ``ema``."""
    if isinstance(params, nn.Module):
        params = dict(params.named_parameters())
    if set(params) != set(ema.shadow):
        raise ValueError("EMA shadow and parameters have different names")
    d = ema.effective_decay(step)
    with torch.no_grad():
        for name, p in params.items():
            s = ema.shadow[name]
            if s.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {tuple(s.shape)} vs {tuple(p.shape)}")
            s.mul_(d).add_(p.detach(), alpha=1.0 - d)
    return ema
