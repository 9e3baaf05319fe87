"""Training loop for the denoiser on synthetic clips."""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .backbone import FEATDenoiser, ModelConfig
from .checkpoint import save_checkpoint
from .data import SyntheticVideoSpec, gen_dataset
from .diffusion import DiffusionSchedule, EmaState, elbo_loss, ema_update, make_schedule, q_sample
from .numerics import RngStream

__all__ = ["TrainConfig", "TrainResult", "TrainingDiverged", "train", "validation_mse", "data_spec"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-4
    weight_decay: float = 0.0
    batch_size: int = 8
    steps: int = 2000
    ema_decay: float = 0.9999
    ema_warmup: bool = True
    flip: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    n_train: int = 256
    n_val: int = 16
    val_draws: int = 4
    n_blobs: int = 2
    speed_min: float = 0.5
    speed_max: float = 2.0
    radius_min: float = 3.0
    radius_max: float = 6.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")

    def replace(self, **changes) -> "TrainConfig":
        model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
        model_changes = {k: changes.pop(k) for k in list(changes) if k in model_keys}
        cfg = dataclasses.replace(self, **changes)
        if model_changes:
            cfg = dataclasses.replace(cfg, model=cfg.model.replace(**model_changes))
        return cfg

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.update(out.pop("model"))
        return out


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, checkpoint: Optional[str]):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    model: FEATDenoiser
    ema: EmaState
    schedule: DiffusionSchedule
    losses: list  # (step, loss, wall_ms)
    val_mse: float
    checkpoint: Optional[str] = None
    val_history: list = field(default_factory=list)  # (step, eps-MSE)


def data_spec(config: TrainConfig, seed: int) -> SyntheticVideoSpec:
    m = config.model
    return SyntheticVideoSpec(
        frames=m.frames,
        height=m.height,
        width=m.width,
        channels=m.channels,
        n_blobs=config.n_blobs,
        speed=(config.speed_min, config.speed_max),
        radius=(config.radius_min, config.radius_max),
        seed=seed,
    )


def validation_mse(
    model: torch.nn.Module,
    clips: torch.Tensor,
    schedule: DiffusionSchedule,
    seed: int,
    draws: int = 4,
    batch_size: int = 16,
) -> float:
    """Epsilon-MSE on fixed clips with fixed (t, noise) draws per seed."""
    rng = RngStream(seed).spawn("validation")
    total, count = 0.0, 0
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for _ in range(draws):
            for start in range(0, len(clips), batch_size):
                x0 = clips[start : start + batch_size]
                t = rng.integers(1, schedule.T + 1, (len(x0),))
                eps = torch.from_numpy(rng.normal(tuple(x0.shape))).to(x0.dtype)
                pred = model(q_sample(x0, t, eps, schedule), torch.from_numpy(t))
                total += float(((pred - eps) ** 2).sum())
                count += eps.numel()
    model.train(was_training)
    return total / count


def _write_losses(path: str, rows: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "wall_ms"])
        for step, loss, wall in rows:
            writer.writerow([step, repr(loss), f"{wall:.3f}"])


def train(
    config: TrainConfig,
    out_dir: Optional[str] = None,
    train_clips: Optional[np.ndarray] = None,
    val_clips: Optional[np.ndarray] = None,
    model: Optional[FEATDenoiser] = None,
    val_every: int = 0,
    target_val_mse: Optional[float] = None,
) -> TrainResult:
    """Optimise the epsilon-prediction loss with AdamW and track an EMA.

    Independent child streams of ``RngStream(config.seed)`` drive the batch
    order, timesteps and noise, and flips, so toggling augmentation changes
    nothing else. Writes ``loss.csv`` and ``checkpoint.npz`` into ``out_dir``
    when given.

    With ``val_every`` the validation error is recorded in ``val_history``
    every that many steps; training stops early once it falls below
    ``target_val_mse``.
    """
    torch.manual_seed(config.seed)  # no torch RNG is used; pinned anyway
    root = RngStream(config.seed)
    schedule = make_schedule(config.model.timesteps)
    if train_clips is None:
        train_clips = np.stack(gen_dataset(data_spec(config, config.seed), config.n_train))
    if val_clips is None:
        val_clips = np.stack(gen_dataset(data_spec(config, config.seed + 1_000_003), config.n_val))
    data = torch.as_tensor(np.asarray(train_clips, dtype=np.float32))
    val = torch.as_tensor(np.asarray(val_clips, dtype=np.float32))

    model = model if model is not None else FEATDenoiser(config.model, seed=config.seed)
    model.train()
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    ema = EmaState.from_model(model, decay=config.ema_decay, warmup=config.ema_warmup)

    batches = root.spawn("batches")
    diffusion_rng = root.spawn("diffusion")
    flips = root.spawn("flips")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    extra = {"train_config": config.to_dict()}
    losses = []
    val_history = []
    t0 = time.perf_counter()
    for step in range(1, config.steps + 1):
        idx = batches.integers(0, len(data), (config.batch_size,))
        x0 = data[torch.from_numpy(idx)]
        if config.flip:
            mask = torch.from_numpy(flips.uniform((config.batch_size,)) < 0.5)
            x0 = torch.where(mask[:, None, None, None, None], x0.flip(-1), x0)
        try:
            loss = elbo_loss(model, x0, schedule, diffusion_rng)
        except FloatingPointError as err:
            path = None
            if out_dir is not None:
                path = save_checkpoint(
                    os.path.join(out_dir, "last_good.npz"), model, ema, {**extra, "step": step - 1}
                )
                _write_losses(os.path.join(out_dir, "loss.csv"), losses)
            raise TrainingDiverged(f"training aborted at step {step}: {err}", path) from err
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        ema_update(ema, model, step)
        losses.append((step, loss.item(), (time.perf_counter() - t0) * 1e3))
        if step % 100 == 0:
            log.info("step %d loss %.4f", step, losses[-1][1])
        if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_{step:06d}.npz"), model, ema, {**extra, "step": step})
        if val_every and step % val_every == 0:
            val_history.append((step, validation_mse(model, val, schedule, config.seed, draws=config.val_draws)))
            log.info("step %d validation eps-MSE %.4f", step, val_history[-1][1])
            if target_val_mse is not None and val_history[-1][1] < target_val_mse:
                break

    if val_history and val_history[-1][0] == losses[-1][0]:
        val_mse = val_history[-1][1]
    else:
        val_mse = validation_mse(model, val, schedule, config.seed, draws=config.val_draws)
    path = None
    if out_dir is not None:
        _write_losses(os.path.join(out_dir, "loss.csv"), losses)
        path = save_checkpoint(
            os.path.join(out_dir, "checkpoint.npz"), model, ema, {**extra, "step": losses[-1][0], "val_mse": val_mse}
        )
    return TrainResult(model, ema, schedule, losses, val_mse, path, val_history)
