"""Scikit-learn style front end for training and sampling the video denoiser."""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .backbone import ModelConfig
from .diffusion import sample as ddpm_sample
from .numerics import RngStream
from .training import TrainConfig, train, validation_mse
from .validation import check_positive_int, check_timesteps, check_video_array

__all__ = ["FEATVideoDiffusion"]


class FEATVideoDiffusion(BaseEstimator):
    """Denoising-diffusion generative model for short video clips.

    ``fit`` learns the noise predictor on clips shaped
    (n_clips, frames, channels, height, width) with values in [-1, 1];
    ``sample`` draws new clips with the EMA weights; ``score`` returns the
    negative noise-prediction MSE so that larger is better.

    Parameters
    ----------
    d : int
        Hidden width.
    n_triplets : int
        Number of spatial/temporal/channel block groups.
    patch : int
        Spatial patch size; must divide height and width.
    variant : {"full", "wkv_channel", "wkv", "baseline"}
        Which block family to build. ``"full"`` adds residual value guidance.
    timesteps : int
        Length of the diffusion chain.
    max_steps : int
        Optimiser steps.
    random_state : int
        Seed for initialisation, batching, noise and augmentation.
    """

    def __init__(
        self,
        d: int = 64,
        n_triplets: int = 2,
        patch: int = 4,
        ffn_mult: int = 4,
        variant: str = "full",
        timesteps: int = 50,
        lr: float = 1e-4,
        weight_decay: float = 0.0,
        batch_size: int = 8,
        max_steps: int = 2000,
        ema_decay: float = 0.9999,
        ema_warmup: bool = True,
        flip: bool = True,
        random_state: int = 0,
    ):
        self.d = d
        self.n_triplets = n_triplets
        self.patch = patch
        self.ffn_mult = ffn_mult
        self.variant = variant
        self.timesteps = timesteps
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.ema_decay = ema_decay
        self.ema_warmup = ema_warmup
        self.flip = flip
        self.random_state = random_state

    def _train_config(self, clip_shape) -> TrainConfig:
        frames, channels, height, width = clip_shape
        model = ModelConfig(
            d=self.d,
            n_triplets=self.n_triplets,
            patch=self.patch,
            frames=frames,
            channels=channels,
            height=height,
            width=width,
            ffn_mult=self.ffn_mult,
            timesteps=self.timesteps,
            variant=self.variant,
        )
        return TrainConfig(
            model=model,
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_size=check_positive_int(self.batch_size, "batch_size"),
            steps=check_positive_int(self.max_steps, "max_steps"),
            ema_decay=self.ema_decay,
            ema_warmup=self.ema_warmup,
            flip=self.flip,
            seed=int(self.random_state),
        )

    def fit(self, X, y=None, X_val=None):
        """Train on clips ``X``; ``X_val`` (default: ``X``) sets ``val_mse_``."""
        X = check_video_array(X)
        X_val = X if X_val is None else check_video_array(X_val, expected_shape=X.shape[1:])
        config = self._train_config(X.shape[1:])
        result = train(config, train_clips=X, val_clips=X_val)
        self.config_ = config
        self.model_ = result.model
        self.ema_ = result.ema
        self.schedule_ = result.schedule
        self.loss_curve_ = [loss for _, loss, _ in result.losses]
        self.val_mse_ = result.val_mse
        self.n_steps_ = len(result.losses)
        self.clip_shape_ = tuple(X.shape[1:])
        return self

    def predict_noise(self, X_t, t) -> np.ndarray:
        """Predicted noise for noisy clips ``X_t`` at timesteps ``t``."""
        check_is_fitted(self, "model_")
        X_t = check_video_array(X_t, allow_single=True, expected_shape=self.clip_shape_)
        t = check_timesteps(t, len(X_t), self.schedule_.T)
        with torch.no_grad():
            out = self.model_(torch.from_numpy(X_t), torch.from_numpy(t))
        return out.numpy()

    def sample(self, n_samples: int = 1, random_state: Optional[int] = None, use_ema: bool = True) -> np.ndarray:
        """Draw ``n_samples`` clips by ancestral sampling."""
        check_is_fitted(self, "model_")
        n_samples = check_positive_int(n_samples, "n_samples")
        seed = self.random_state if random_state is None else random_state
        rng = RngStream(int(seed)).spawn("sampling")
        out = ddpm_sample(
            self.model_, (n_samples,) + self.clip_shape_, self.schedule_, rng, ema=self.ema_ if use_ema else None
        )
        return out.numpy()

    def score(self, X, y=None) -> float:
        """Negative epsilon-MSE on ``X`` with fixed noise draws."""
        check_is_fitted(self, "model_")
        X = check_video_array(X, expected_shape=self.clip_shape_)
        return -validation_mse(self.model_, torch.from_numpy(X), self.schedule_, int(self.random_state))
