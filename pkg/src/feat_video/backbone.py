"""The video denoiser: patchify, cascaded spatial/temporal/channel blocks, unpatchify.

Tokens are kept as [B, F, S, D] with S = H' * W' sites per frame. Each block
regroups them for its own mixer:

* spatial  -> [B*F, S, D]   (one WKV sequence per frame, row-major sites)
* temporal -> [B*S, F, D]   (one WKV sequence per site)
* channel  -> [B, F*S, D]   (channel attention over the whole clip)

Every block is an adaLN-Zero pre-norm residual block, so a freshly
initialised network reduces to embed -> final norm -> head.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .channel_attention import ChannelAttention
from .numerics import RngStream, init_constant_, init_normal_, init_xavier_
from .wkv import SoftmaxAttention, WkvAttention

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "FEAT_S",
    "FEAT_L",
    "PatchEmbed",
    "TimestepEmbedder",
    "sinusoidal_features",
    "FEATBlock",
    "FEATDenoiser",
    "count_params",
    "count_flops",
]

# ablation ladder, weakest first
VARIANTS = ("baseline", "wkv", "wkv_channel", "full")

_LAYOUTS = {
    "baseline": (("spatial", "softmax"), ("temporal", "softmax")),
    "wkv": (("spatial", "wkv"), ("temporal", "wkv")),
    "wkv_channel": (("spatial", "wkv"), ("temporal", "wkv"), ("channel", "channel")),
    "full": (("spatial", "wkv"), ("temporal", "wkv"), ("channel", "channel")),
}


@dataclass(frozen=True)
class ModelConfig:
    """Denoiser hyper-parameters.

    ``n_triplets`` counts block groups; for ``variant="full"`` each group is
    spatial -> temporal -> channel. Input clips are [frames, channels, height, width].
    """

    d: int = 64
    n_triplets: int = 2
    patch: int = 4
    frames: int = 8
    channels: int = 1
    height: int = 32
    width: int = 32
    ffn_mult: int = 4
    timesteps: int = 50
    variant: str = "full"

    def __post_init__(self):
        if self.d < 8 or self.d % 2:
            raise ValueError(f"d must be even and >= 8, got {self.d}")
        if self.n_triplets < 0:
            raise ValueError(f"n_triplets must be >= 0, got {self.n_triplets}")
        if self.patch < 1 or self.height % self.patch or self.width % self.patch:
            raise ValueError(
                f"height {self.height} and width {self.width} must be divisible by patch {self.patch}"
            )
        if min(self.frames, self.channels, self.height, self.width, self.ffn_mult) < 1:
            raise ValueError("frames, channels, height, width and ffn_mult must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def sites(self) -> int:
        h, w = self.grid
        return h * w

    @property
    def n_tokens(self) -> int:
        return self.frames * self.sites

    @property
    def guided(self) -> bool:
        return self.variant == "full"

    def layout(self) -> list[tuple[str, str]]:
        return [blk for _ in range(self.n_triplets) for blk in _LAYOUTS[self.variant]]

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# 16 frames of 128x128 RGB through an 8x latent autoencoder -> 4 x 16 x 16 latents
FEAT_S = ModelConfig(d=512, n_triplets=9, patch=2, frames=16, channels=4, height=16, width=16, timesteps=1000)
FEAT_L = FEAT_S.replace(d=1024)


class PatchEmbed(nn.Module):
    """Per-frame non-overlapping patch convolution plus learned positions.

    Returns ``(tokens, z)`` where ``z`` is the convolution output before the
    spatial and temporal position tables are added.
    """

    def __init__(self, config: ModelConfig, stream=None, device=None, dtype=None):
        super().__init__()
        kw = dict(device=device, dtype=dtype)
        c, p, d = config.channels, config.patch, config.d
        self.config = config
        self.proj = nn.Conv2d(c, d, kernel_size=p, stride=p, **kw)
        self.pos_spatial = nn.Parameter(torch.empty(config.sites, d, **kw))
        self.pos_temporal = nn.Parameter(torch.empty(config.frames, d, **kw))
        self.reset_parameters(stream or RngStream(0))

    def reset_parameters(self, stream: RngStream) -> None:
        init_xavier_(self.proj.weight, stream)
        init_constant_(self.proj.bias, 0.0)
        init_normal_(self.pos_spatial, stream, 0.02)
        init_normal_(self.pos_temporal, stream, 0.02)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, Fr, C, H, W = x.shape
        y = self.proj(x.reshape(B * Fr, C, H, W))  # [B*F, D, H', W']
        z = y.flatten(2).transpose(1, 2).reshape(B, Fr, -1, y.shape[1])
        tokens = z + self.pos_spatial + self.pos_temporal[:, None, :]
        return tokens, z


def sinusoidal_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """``[sin(t f), cos(t f)]`` with ``dim/2`` frequencies from 1 down to 1e-4."""
    half = dim // 2
    if half > 1:
        freqs = torch.exp(-math.log(1e4) * torch.arange(half, dtype=torch.float64) / (half - 1))
    else:
        freqs = torch.ones(1, dtype=torch.float64)
    args = t.to(torch.float64)[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class TimestepEmbedder(nn.Module):
    def __init__(self, dim, stream=None, device=None, dtype=None):
        super().__init__()
        kw = dict(device=device, dtype=dtype)
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim, **kw), nn.SiLU(), nn.Linear(dim, dim, **kw))
        self.reset_parameters(stream or RngStream(0))

    def reset_parameters(self, stream: RngStream) -> None:
        for lin in (self.mlp[0], self.mlp[2]):
            init_normal_(lin.weight, stream, 0.02)
            init_constant_(lin.bias, 0.0)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        raw = sinusoidal_features(t, self.dim).to(self.mlp[0].weight.dtype)
        return self.mlp(raw)


class FEATBlock(nn.Module):
    """adaLN-Zero residual block around one token mixer and a GELU FFN."""

    def __init__(self, config: ModelConfig, axis: str, mixer: str, stream=None, device=None, dtype=None):
        super().__init__()
        stream = stream or RngStream(0)
        kw = dict(device=device, dtype=dtype)
        d = config.d
        self.axis = axis
        self.grid = config.grid
        guided = config.guided
        if mixer == "wkv":
            self.mixer = WkvAttention(d, mode=axis, guided=guided, stream=stream.spawn("mixer"), **kw)
        elif mixer == "channel":
            self.mixer = ChannelAttention(d, guided=guided, stream=stream.spawn("mixer"), **kw)
        elif mixer == "softmax":
            self.mixer = SoftmaxAttention(d, stream=stream.spawn("mixer"), **kw)
        else:
            raise ValueError(f"unknown mixer {mixer!r}")
        self.norm1 = nn.LayerNorm(d, eps=1e-6, elementwise_affine=False, **kw)
        self.norm2 = nn.LayerNorm(d, eps=1e-6, elementwise_affine=False, **kw)
        hidden = config.ffn_mult * d
        self.ffn = nn.Sequential(nn.Linear(d, hidden, **kw), nn.GELU(), nn.Linear(hidden, d, **kw))
        self.adaln = nn.Sequential(nn.SiLU(), nn.Linear(d, 6 * d, **kw))
        self.reset_parameters(stream.spawn("block"))

    def reset_parameters(self, stream: RngStream) -> None:
        for lin in (self.ffn[0], self.ffn[2]):
            init_xavier_(lin.weight, stream)
            init_constant_(lin.bias, 0.0)
        init_constant_(self.adaln[1].weight, 0.0)
        init_constant_(self.adaln[1].bias, 0.0)

    def _to_seq(self, x: torch.Tensor) -> torch.Tensor:
        B, Fr, S, D = x.shape
        if self.axis == "spatial":
            return x.reshape(B * Fr, S, D)
        if self.axis == "temporal":
            return x.transpose(1, 2).reshape(B * S, Fr, D)
        return x.reshape(B, Fr * S, D)

    def _from_seq(self, y: torch.Tensor, shape) -> torch.Tensor:
        B, Fr, S, D = shape
        if self.axis == "temporal":
            return y.reshape(B, S, Fr, D).transpose(1, 2)
        return y.reshape(B, Fr, S, D)

    def modulation(self, cond: torch.Tensor) -> tuple[torch.Tensor, ...]:
        """``(gamma1, beta1, alpha1, gamma2, beta2, alpha2)`` shaped [B, 1, 1, D]."""
        shift1, scale1, gate1, shift2, scale2, gate2 = self.adaln(cond)[:, None, None, :].chunk(6, dim=-1)
        return 1 + scale1, shift1, gate1, 1 + scale2, shift2, gate2

    def forward(self, x: torch.Tensor, cond: torch.Tensor, z: Optional[torch.Tensor] = None) -> torch.Tensor:
        g1, b1, a1, g2, b2, a2 = self.modulation(cond)
        h = g1 * self.norm1(x) + b1
        zs = None if z is None else self._to_seq(z)
        mixed = self.mixer(self._to_seq(h), zs, grid=self.grid)
        x = x + a1 * self._from_seq(mixed, x.shape)
        return x + a2 * self.ffn(g2 * self.norm2(x) + b2)


class FEATDenoiser(nn.Module):
    """Noise predictor ``eps_hat = model(x_t, t)`` for clips [B, F, C, H, W].

    All initial weights are drawn from ``RngStream(seed)``; block ``i`` uses
    its own child stream so structurally identical variants share weights.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, device=None, dtype=None):
        super().__init__()
        self.config = config
        kw = dict(device=device, dtype=dtype)
        root = RngStream(seed).spawn("init")
        self.embed = PatchEmbed(config, stream=root.spawn("embed"), **kw)
        self.t_embed = TimestepEmbedder(config.d, stream=root.spawn("t_embed"), **kw)
        self.blocks = nn.ModuleList(
            FEATBlock(config, axis, mixer, stream=root.spawn(f"block{i}"), **kw)
            for i, (axis, mixer) in enumerate(config.layout())
        )
        self.final_norm = nn.LayerNorm(config.d, eps=1e-6, elementwise_affine=False, **kw)
        out = config.channels * config.patch**2
        self.head = nn.Linear(config.d, out, **kw)
        head_stream = root.spawn("head")
        init_xavier_(self.head.weight, head_stream)
        init_constant_(self.head.bias, 0.0)

    def unpatchify(self, y: torch.Tensor) -> torch.Tensor:
        """[B, F, S, C*p*p] -> [B, F, C, H, W]."""
        c = self.config
        B, Fr = y.shape[:2]
        gh, gw = c.grid
        p = c.patch
        y = y.reshape(B, Fr, gh, gw, c.channels, p, p)
        y = y.permute(0, 1, 4, 2, 5, 3, 6)
        return y.reshape(B, Fr, c.channels, gh * p, gw * p)

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        unbatched = x.ndim == 4
        if unbatched:
            x = x.unsqueeze(0)
        c = self.config
        if tuple(x.shape[1:]) != (c.frames, c.channels, c.height, c.width):
            raise ValueError(
                f"expected clips of shape {(c.frames, c.channels, c.height, c.width)}, got {tuple(x.shape[1:])}"
            )
        t = torch.as_tensor(t, device=x.device)
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        tokens, z = self.embed(x)
        cond = self.t_embed(t)
        guidance = z if c.guided else None
        for block in self.blocks:
            tokens = block(tokens, cond, guidance)
        out = self.unpatchify(self.head(self.final_norm(tokens)))
        return out[0] if unbatched else out


def count_params(config: ModelConfig) -> int:
    """Exact learnable-parameter count, by traversing a meta-device model."""
    model = FEATDenoiser(config, device="meta")
    return sum(p.numel() for p in model.parameters())


def count_flops(config: ModelConfig, batch: int = 1, mixer: str = "feat", breakdown: bool = False):
    """Analytic forward FLOPs (2 per multiply-accumulate) for one batch.

    ``mixer="quadratic"`` prices the same network with every token mixer
    replaced by softmax self-attention over the same token group (spatial:
    per frame, temporal: per site, channel slot: the whole clip).
    With ``breakdown=True`` returns a dict with ``dense`` (matmul and
    convolution work) and ``scan`` (WKV accumulation) parts and ``total``.
    """
    if mixer not in ("feat", "quadratic"):
        raise ValueError(f"mixer must be 'feat' or 'quadratic', got {mixer!r}")
    d, N, S, Fr = config.d, config.n_tokens, config.sites, config.frames
    p2c = config.channels * config.patch**2
    dense = 0
    scan = 0
    dense += N * p2c * d  # patch conv
    dense += 2 * d * d  # timestep MLP (per sample)
    dense += N * d * p2c  # head
    for axis, kind in config.layout():
        if mixer == "quadratic":
            kind = "softmax"
        dense += 6 * d * d  # adaLN projection (per sample)
        dense += 2 * config.ffn_mult * d * d * N  # FFN
        dense += 4 * N * d * d  # R/K/V/O or Q/K/V/O projections
        if kind == "wkv":
            dense += (9 if axis == "spatial" else 3) * N * d  # depthwise shift
            scan += 8 * N * d  # two directions x (numerator, denominator) + combination
        elif kind == "channel":
            dense += 2 * d * d * N  # normalised Q^T K and A V
        else:
            group = {"spatial": S, "temporal": Fr, "channel": N}[axis]
            dense += 2 * N * group * d  # scores and weighted values
    parts = {"dense": 2 * batch * dense, "scan": 2 * batch * scan}
    parts["total"] = parts["dense"] + parts["scan"]
    return parts if breakdown else parts["total"]
