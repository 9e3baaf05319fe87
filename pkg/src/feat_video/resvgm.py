"""Residual value guidance.

The token embedding ``Z`` produced once by the patch embedding is fed to
every block. Inside a block it enters the attention's value path and is
added back as a residual correction on the output::

    H = attn(Q, K, V + lam1 * Z) + lam2 * (Z - V)

with ``lam1`` and ``lam2`` learnable per channel and zero-initialised, so an
untrained guided block equals its unguided counterpart exactly.
"""

from __future__ import annotations

from typing import Callable, Optional

import torch
from torch import nn

__all__ = ["ResidualValueGuidance", "apply_resvgm", "resvgm_param_overhead"]


def apply_resvgm(
    attn: Callable[[Optional[torch.Tensor], torch.Tensor, torch.Tensor], torch.Tensor],
    q: Optional[torch.Tensor],
    k: torch.Tensor,
    v: torch.Tensor,
    z: torch.Tensor,
    lam1: torch.Tensor,
    lam2: torch.Tensor,
) -> torch.Tensor:
    """Guided attention output; ``q`` may be ``None`` for attention without queries."""
    if z.shape != v.shape:
        raise ValueError(f"guidance shape {tuple(z.shape)} != value shape {tuple(v.shape)}")
    d = v.shape[-1]
    if lam1.shape != (d,) or lam2.shape != (d,):
        raise ValueError(
            f"guidance weights must have shape ({d},), got {tuple(lam1.shape)} and {tuple(lam2.shape)}"
        )
    return attn(q, k, v + lam1 * z) + lam2 * (z - v)


class ResidualValueGuidance(nn.Module):
    """Holds the two per-channel guidance weights of one block."""

    def __init__(self, dim: int, device=None, dtype=None):
        super().__init__()
        self.lam1 = nn.Parameter(torch.zeros(dim, device=device, dtype=dtype))
        self.lam2 = nn.Parameter(torch.zeros(dim, device=device, dtype=dtype))

    def forward(self, attn, q, k, v, z):
        return apply_resvgm(attn, q, k, v, z, self.lam1, self.lam2)


def resvgm_param_overhead(model_or_config) -> float:
    """Fraction of all parameters that belong to residual value guidance."""
    from .backbone import FEATDenoiser, ModelConfig

    if isinstance(model_or_config, ModelConfig):
        model = FEATDenoiser(model_or_config, device="meta")
    else:
        model = model_or_config
    guided = sum(
        p.numel()
        for m in model.modules()
        if isinstance(m, ResidualValueGuidance)
        for p in m.parameters()
    )
    total = sum(p.numel() for p in model.parameters())
    return guided / total
