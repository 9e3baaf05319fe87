"""Global channel (transposed) attention.

Attention is taken between channels rather than tokens: the [D, D] map
``softmax(norm(Q)^T norm(K) * exp(tau))`` costs Theta(D^2 N) for N tokens,
so it is linear in the token count of the whole clip.
"""

from __future__ import annotations

from typing import Optional

import torch
from torch import nn

from .numerics import RngStream, init_constant_, init_xavier_
from .resvgm import ResidualValueGuidance, apply_resvgm

__all__ = ["channel_mix", "channel_attention", "ChannelAttention"]


def channel_mix(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
    """Core channel attention on [..., N, D] projections, returns [..., N, D]."""
    if q.shape[-2] == 0:
        raise ValueError("channel attention needs at least one token")
    # cosine similarity of channel rows; the norms are applied to the D x D
    # product so no normalised copy of q or k is materialised
    # squared sums reduce along the token axis far faster than norm(dim=-2);
    # clamping before the root keeps the gradient finite for an all-zero channel
    qn = q.square().sum(-2).clamp_min(1e-24).sqrt()  # [..., D]
    kn = k.square().sum(-2).clamp_min(1e-24).sqrt()
    cos = (q.transpose(-1, -2) @ k) / (qn.unsqueeze(-1) * kn.unsqueeze(-2))
    attn = torch.softmax(cos * torch.exp(tau), dim=-1)  # [..., D, D]
    return v @ attn.transpose(-1, -2)


def channel_attention(
    x: torch.Tensor,
    *,
    q_weight: torch.Tensor,
    k_weight: torch.Tensor,
    v_weight: torch.Tensor,
    o_weight: torch.Tensor,
    tau: torch.Tensor,
    z: Optional[torch.Tensor] = None,
    lam1: Optional[torch.Tensor] = None,
    lam2: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Channel attention of tokens ``x`` [..., N, D], optionally guided by ``z``."""
    q = x @ q_weight.T
    k = x @ k_weight.T
    v = x @ v_weight.T

    def attn(q_, k_, v_):
        return channel_mix(q_, k_, v_, tau) @ o_weight.T

    if z is None:
        return attn(q, k, v)
    return apply_resvgm(attn, q, k, v, z, lam1, lam2)


class ChannelAttention(nn.Module):
    """Channel-attention sub-layer over all tokens of a clip, input [B, N, D]."""

    def __init__(self, dim, guided=True, stream=None, device=None, dtype=None):
        super().__init__()
        kw = dict(device=device, dtype=dtype)
        self.query = nn.Linear(dim, dim, bias=False, **kw)
        self.key = nn.Linear(dim, dim, bias=False, **kw)
        self.value = nn.Linear(dim, dim, bias=False, **kw)
        self.output = nn.Linear(dim, dim, bias=False, **kw)
        self.log_temperature = nn.Parameter(torch.empty((), **kw))
        self.guidance = ResidualValueGuidance(dim, **kw) if guided else None
        self.reset_parameters(stream or RngStream(0))

    def reset_parameters(self, stream: RngStream) -> None:
        for lin in (self.query, self.key, self.value, self.output):
            init_xavier_(lin.weight, stream)
        init_constant_(self.log_temperature, 0.0)

    def forward(self, x: torch.Tensor, z: Optional[torch.Tensor] = None, grid=None) -> torch.Tensor:
        guided = self.guidance is not None and z is not None
        return channel_attention(
            x,
            q_weight=self.query.weight,
            k_weight=self.key.weight,
            v_weight=self.value.weight,
            o_weight=self.output.weight,
            tau=self.log_temperature,
            z=z if guided else None,
            lam1=self.guidance.lam1 if guided else None,
            lam2=self.guidance.lam2 if guided else None,
        )
