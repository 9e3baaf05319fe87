"""Bidirectional weighted key-value (WKV) attention with convolutional token shift.

For a sequence of ``T`` tokens with per-channel keys ``k`` and values ``v``::

    wkv[t] = (sum_{i != t} e^{-(|t-i|-1) w'/T + k[i]} v[i] + e^{u + k[t]} v[t])
           / (sum_{i != t} e^{-(|t-i|-1) w'/T + k[i]}      + e^{u + k[t]})

where ``w' = softplus(w)``. :func:`wkv_scan` evaluates this in Theta(T*D)
with two exclusive prefix sums; :func:`wkv_reference` is the literal
quadratic formula and exists to check it.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .numerics import RngStream, init_constant_, init_xavier_
from .resvgm import ResidualValueGuidance, apply_resvgm

__all__ = [
    "token_shift_spatial",
    "token_shift_temporal",
    "wkv_scan",
    "wkv_reference",
    "softmax_attention",
    "wkv_sublayer",
    "WkvAttention",
    "SoftmaxAttention",
    "initial_decay",
]


def token_shift_spatial(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Depthwise 3x3 correlation of ``x`` [N, D, H, W] with zero padding."""
    if x.ndim != 4 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError(f"expected [N, D, H, W] with H, W > 0, got {tuple(x.shape)}")
    d = x.shape[1]
    if kernel.shape != (d, 3, 3):
        raise ValueError(f"spatial kernel must be ({d}, 3, 3), got {tuple(kernel.shape)}")
    return F.conv2d(x, kernel.unsqueeze(1), padding=1, groups=d)


def token_shift_temporal(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Depthwise length-3 correlation of ``x`` [N, D, F] with zero padding."""
    if x.ndim != 3 or x.shape[-1] == 0:
        raise ValueError(f"expected [N, D, F] with F > 0, got {tuple(x.shape)}")
    d = x.shape[1]
    if kernel.shape != (d, 3):
        raise ValueError(f"temporal kernel must be ({d}, 3), got {tuple(kernel.shape)}")
    return F.conv1d(x, kernel.unsqueeze(1), padding=1, groups=d)


_CHUNK = 512


def _exclusive_cumsum(x: torch.Tensor, reverse: bool = False) -> torch.Tensor:
    # explicit shift instead of cumsum - x, which cancels catastrophically
    if reverse:
        x = x.flip(-2)
    zero = torch.zeros_like(x[..., :1, :])
    out = torch.cat([zero, x[..., :-1, :].cumsum(-2)], dim=-2)
    return out.flip(-2) if reverse else out


def _softplus(w: torch.Tensor) -> torch.Tensor:
    return torch.logaddexp(w, torch.zeros_like(w))


def wkv_scan(k: torch.Tensor, v: torch.Tensor, w: torch.Tensor, u: torch.Tensor, chunk: int = _CHUNK) -> torch.Tensor:
    """Linear-time bidirectional WKV over the second-to-last axis.

    ``k`` and ``v`` are [..., T, D]; ``w`` (raw decay, softplus applied here)
    and ``u`` (bonus) are [D]. Exponents are shifted per position by the
    largest of the three contributing log-scales, so no term exceeds 1.

    The sequence is processed in blocks of ``chunk`` tokens: block totals give
    the carry into each block, and each block then runs its own prefix sums.
    This is the same arithmetic as one long pass, but the working set stays
    in cache, so the wall-clock cost stays linear at large ``T``.
    """
    if k.shape != v.shape:
        raise ValueError(f"k and v shapes differ: {tuple(k.shape)} vs {tuple(v.shape)}")
    T, D = k.shape[-2], k.shape[-1]
    if T < 1:
        raise ValueError("sequence length must be >= 1")
    if chunk < 1:
        raise ValueError(f"chunk must be >= 1, got {chunk}")
    # exact softplus; F.softplus switches to the identity above 20, which is off by e^-20
    step = _softplus(w) / T
    pos = torch.arange(T, dtype=k.dtype, device=k.device).unsqueeze(-1)
    drift = pos * step
    # forward: weight of i seen from t is e^{a_i - (t-1) step}, a = k + i step
    # backward: weight of i seen from t is e^{b_i + (t+1) step}, b = k - i step
    a_max = (k + drift).detach().amax(-2, keepdim=True)
    b_max = (k - drift).detach().amax(-2, keepdim=True)

    spans = [(s, min(s + chunk, T)) for s in range(0, T, chunk)]
    terms = []
    for s, e in spans:
        kc, vc, dc = k[..., s:e, :], v[..., s:e, :], drift[s:e]
        ea = torch.exp(kc + dc - a_max)
        eb = torch.exp(kc - dc - b_max)
        # numerator and denominator share one prefix sum per direction
        terms.append((torch.cat([ea * vc, ea], dim=-1), torch.cat([eb * vc, eb], dim=-1)))
    carry_f = _exclusive_cumsum(torch.cat([f.sum(-2, keepdim=True) for f, _ in terms], dim=-2))
    carry_b = _exclusive_cumsum(torch.cat([b.sum(-2, keepdim=True) for _, b in terms], dim=-2), reverse=True)

    outs = []
    for j, ((s, e), (f, b)) in enumerate(zip(spans, terms)):
        fwd = _exclusive_cumsum(f) + carry_f[..., j : j + 1, :]
        bwd = _exclusive_cumsum(b, reverse=True) + carry_b[..., j : j + 1, :]
        p = pos[s:e]
        log_f = a_max - (p - 1) * step
        log_b = b_max + (p + 1) * step
        log_u = u + k[..., s:e, :]
        shift = torch.maximum(torch.maximum(log_f, log_b), log_u).detach()
        sf = torch.exp(log_f - shift)
        sb = torch.exp(log_b - shift)
        su = torch.exp(log_u - shift)
        num = sf * fwd[..., :D] + sb * bwd[..., :D] + su * v[..., s:e, :]
        den = sf * fwd[..., D:] + sb * bwd[..., D:] + su
        outs.append(num / den)
    out = outs[0] if len(outs) == 1 else torch.cat(outs, dim=-2)
    if not torch.isfinite(out).all():
        bad = (~torch.isfinite(out)).nonzero()[0].tolist()
        raise FloatingPointError(
            f"wkv_scan produced a non-finite value at index {bad} "
            f"(max decay softplus(w)={float(_softplus(w).max()):.3g}, "
            f"key range [{float(k.min()):.3g}, {float(k.max()):.3g}])"
        )
    return out


def wkv_reference(k, v, w, u) -> np.ndarray:
    """Literal O(T^2) evaluation of the WKV formula in float64 numpy."""
    k = np.asarray(_as_numpy(k), dtype=np.float64)
    v = np.asarray(_as_numpy(v), dtype=np.float64)
    w = np.asarray(_as_numpy(w), dtype=np.float64)
    u = np.asarray(_as_numpy(u), dtype=np.float64)
    T = k.shape[-2]
    wp = np.logaddexp(0.0, w)
    t_idx = np.arange(T)[:, None]
    i_idx = np.arange(T)[None, :]
    dist = np.abs(t_idx - i_idx)[..., None]  # [T, T, 1]
    logits = -(dist - 1) / T * wp + k[..., None, :, :]  # [..., T(t), T(i), D]
    diag = u + k  # [..., T, D]
    eye = np.eye(T, dtype=bool)[..., None]
    logits = np.where(eye, diag[..., :, None, :], logits)
    weight = np.exp(logits)
    num = (weight * v[..., None, :, :]).sum(-2)
    den = weight.sum(-2)
    return num / den


def _as_numpy(x):
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return x


def softmax_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Plain quadratic softmax self-attention, single head.

    Materialises the full [T, T] score matrix on purpose; used as the
    complexity baseline and for the conventional spatial-temporal model.
    """
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1) @ v


def wkv_sublayer(
    x: torch.Tensor,
    *,
    r_weight: torch.Tensor,
    k_weight: torch.Tensor,
    v_weight: torch.Tensor,
    o_weight: torch.Tensor,
    w: torch.Tensor,
    u: torch.Tensor,
    z: Optional[torch.Tensor] = None,
    lam1: Optional[torch.Tensor] = None,
    lam2: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Gated WKV mixing of already-shifted tokens ``x`` [..., T, D].

    Weights follow ``nn.Linear`` layout (out, in). With ``z`` given the value
    path is guided by ``z`` through ``lam1``/``lam2``.
    """
    r = x @ r_weight.T
    k = x @ k_weight.T
    v = x @ v_weight.T
    gate = torch.sigmoid(r)

    def attn(_q, k_, v_):
        return (gate * wkv_scan(k_, v_, w, u)) @ o_weight.T

    if z is None:
        return attn(None, k, v)
    return apply_resvgm(attn, None, k, v, z, lam1, lam2)


def initial_decay(dim: int) -> torch.Tensor:
    """Raw decay whose softplus spans [0.3, 3] linearly across channels."""
    target = torch.linspace(0.3, 3.0, dim, dtype=torch.float64)
    return torch.log(torch.expm1(target))


class WkvAttention(nn.Module):
    """Token shift followed by gated WKV attention.

    ``mode="spatial"`` shifts with a 3x3 depthwise kernel over the (H, W) grid
    of each frame; ``mode="temporal"`` shifts with a length-3 kernel along the
    sequence. Input is [B, T, D] where T = H*W or T = frames respectively.
    """

    def __init__(self, dim, mode="spatial", guided=True, stream=None, device=None, dtype=None):
        super().__init__()
        if mode not in ("spatial", "temporal"):
            raise ValueError(f"mode must be 'spatial' or 'temporal', got {mode!r}")
        self.dim = dim
        self.mode = mode
        kw = dict(device=device, dtype=dtype)
        ksize = (dim, 3, 3) if mode == "spatial" else (dim, 3)
        self.shift_kernel = nn.Parameter(torch.empty(ksize, **kw))
        self.receptance = nn.Linear(dim, dim, bias=False, **kw)
        self.key = nn.Linear(dim, dim, bias=False, **kw)
        self.value = nn.Linear(dim, dim, bias=False, **kw)
        self.output = nn.Linear(dim, dim, bias=False, **kw)
        self.decay = nn.Parameter(torch.empty(dim, **kw))
        self.bonus = nn.Parameter(torch.empty(dim, **kw))
        self.guidance = ResidualValueGuidance(dim, **kw) if guided else None
        self.reset_parameters(stream or RngStream(0))

    def reset_parameters(self, stream: RngStream) -> None:
        identity = torch.zeros(self.shift_kernel.shape, dtype=torch.float64)
        if self.mode == "spatial":
            identity[:, 1, 1] = 1.0
        else:
            identity[:, 1] = 1.0
        init_constant_(self.shift_kernel, identity)
        for lin in (self.receptance, self.key, self.value, self.output):
            init_xavier_(lin.weight, stream)
        init_constant_(self.decay, initial_decay(self.dim))
        init_constant_(self.bonus, 0.0)

    def shift(self, x: torch.Tensor, grid=None) -> torch.Tensor:
        B, T, D = x.shape
        if self.mode == "spatial":
            h, w = grid
            if h * w != T:
                raise ValueError(f"grid {grid} does not match sequence length {T}")
            y = x.transpose(1, 2).reshape(B, D, h, w)
            y = token_shift_spatial(y, self.shift_kernel)
            return y.reshape(B, D, T).transpose(1, 2)
        y = token_shift_temporal(x.transpose(1, 2), self.shift_kernel)
        return y.transpose(1, 2)

    def forward(self, x: torch.Tensor, z: Optional[torch.Tensor] = None, grid=None) -> torch.Tensor:
        xs = self.shift(x, grid)
        guided = self.guidance is not None and z is not None
        return wkv_sublayer(
            xs,
            r_weight=self.receptance.weight,
            k_weight=self.key.weight,
            v_weight=self.value.weight,
            o_weight=self.output.weight,
            w=self.decay,
            u=self.bonus,
            z=z if guided else None,
            lam1=self.guidance.lam1 if guided else None,
            lam2=self.guidance.lam2 if guided else None,
        )


class SoftmaxAttention(nn.Module):
    """Single-head quadratic self-attention sub-layer for the conventional baseline."""

    def __init__(self, dim, stream=None, device=None, dtype=None):
        super().__init__()
        kw = dict(device=device, dtype=dtype)
        self.query = nn.Linear(dim, dim, bias=False, **kw)
        self.key = nn.Linear(dim, dim, bias=False, **kw)
        self.value = nn.Linear(dim, dim, bias=False, **kw)
        self.output = nn.Linear(dim, dim, bias=False, **kw)
        self.guidance = None
        self.reset_parameters(stream or RngStream(0))

    def reset_parameters(self, stream: RngStream) -> None:
        for lin in (self.query, self.key, self.value, self.output):
            init_xavier_(lin.weight, stream)

    def forward(self, x, z=None, grid=None):
        return self.output(softmax_attention(self.query(x), self.key(x), self.value(x)))
