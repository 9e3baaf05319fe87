"""Finite-difference gradient checks for every learnable operation.

Each case builds a tiny float64 instance with all weights randomised (so
zero-initialised gates and guidance weights do not hide a path), reduces the
output against a fixed random tensor and checks inputs and parameters with
:func:`grad_check`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .backbone import FEATBlock, FEATDenoiser, ModelConfig
from .channel_attention import ChannelAttention
from .numerics import RngStream, grad_check, grad_check_params
from .wkv import WkvAttention, token_shift_spatial, token_shift_temporal, wkv_scan

__all__ = ["GradCase", "GRAD_CASES", "BLOCK_CASES", "run_gradcheck_suite"]


def _t(stream: RngStream, *shape, scale: float = 1.0) -> torch.Tensor:
    return torch.from_numpy(np.asarray(scale * stream.normal(shape)))


def _randomise(module: torch.nn.Module, stream: RngStream, scale: float = 0.5) -> torch.nn.Module:
    module.double()
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(_t(stream, *p.shape, scale=scale))
    return module


def _projection(stream, like: torch.Tensor):
    weights = _t(stream, *like.shape)
    return lambda out: (out * weights).sum()


def _worst(reports) -> float:
    return max(r.max_rel_err for r in reports)


def _check_function(fn: Callable, args: list[torch.Tensor], stream, eps) -> float:
    reduce = _projection(stream, fn(*args))
    errs = []
    for i in range(len(args)):

        def f(value, i=i):
            probe = list(args)
            probe[i] = value
            return reduce(fn(*probe))

        errs.append(grad_check(f, args[i], eps).max_rel_err)
    return max(errs)


def _check_module(module, inputs: tuple, stream, eps, names=None, input_index=(0,)) -> float:
    reduce = _projection(stream, module(*inputs))
    errs = [_worst(grad_check_params(module, inputs, reduce, names=names, eps=eps).values())]
    for i in input_index:

        def f(value, i=i):
            probe = list(inputs)
            probe[i] = value
            return reduce(module(*probe))

        errs.append(grad_check(f, inputs[i], eps).max_rel_err)
    return max(errs)


def case_shift_spatial(stream, eps):
    return _check_function(token_shift_spatial, [_t(stream, 1, 2, 3, 4), _t(stream, 2, 3, 3)], stream, eps)


def case_shift_temporal(stream, eps):
    return _check_function(token_shift_temporal, [_t(stream, 2, 3, 5), _t(stream, 3, 3)], stream, eps)


def case_wkv_scan(stream, eps):
    T = 2 + int(stream.integers(0, 6))
    args = [_t(stream, T, 3), _t(stream, T, 3), _t(stream, 3), _t(stream, 3)]
    return _check_function(wkv_scan, args, stream, eps)


def case_wkv_guided(stream, eps):
    mode = "spatial" if stream.uniform() < 0.5 else "temporal"
    m = _randomise(WkvAttention(3, mode=mode, guided=True), stream)
    if mode == "spatial":
        x, z = _t(stream, 2, 6, 3), _t(stream, 2, 6, 3)
        return _check_module(_Bound(m, (2, 3)), (x, z), stream, eps, input_index=(0, 1))
    x, z = _t(stream, 2, 4, 3), _t(stream, 2, 4, 3)
    return _check_module(_Bound(m, None), (x, z), stream, eps, input_index=(0, 1))


def case_channel_attention(stream, eps):
    m = _randomise(ChannelAttention(3, guided=True), stream)
    x, z = _t(stream, 2, 6, 3), _t(stream, 2, 6, 3)
    return _check_module(_Bound(m, None), (x, z), stream, eps, input_index=(0, 1))


def _block_case(axis, mixer, names_filter=None, frames=2, grid=(4, 4)):
    def run(stream, eps):
        h, w = grid
        cfg = ModelConfig(d=8, n_triplets=1, patch=1, frames=frames, channels=1, height=h, width=w, ffn_mult=2)
        block = _randomise(FEATBlock(cfg, axis, mixer), stream, scale=0.3)
        x = _t(stream, 1, frames, h * w, 8)
        cond = _t(stream, 1, 8)
        z = _t(stream, 1, frames, h * w, 8)
        names = [n for n, _ in block.named_parameters() if names_filter is None or names_filter(n)]
        return _check_module(block, (x, cond, z), stream, eps, names=names, input_index=(0, 1, 2))

    return run


def case_embed_head(stream, eps):
    cfg = ModelConfig(d=8, n_triplets=0, patch=2, frames=2, channels=1, height=4, width=4)
    model = _randomise(FEATDenoiser(cfg), stream)
    x = _t(stream, 1, 2, 1, 4, 4)
    t = torch.tensor([3])
    return _check_module(_Timestep(model, t), (x,), stream, eps)


class _Bound(torch.nn.Module):
    def __init__(self, mixer, grid):
        super().__init__()
        self.mixer = mixer
        self.grid = grid

    def forward(self, x, z):
        return self.mixer(x, z, grid=self.grid)


class _Timestep(torch.nn.Module):
    def __init__(self, model, t):
        super().__init__()
        self.model = model
        self.t = t

    def forward(self, x):
        return self.model(x, self.t)


@dataclass(frozen=True)
class GradCase:
    name: str
    run: Callable[[RngStream, float], float]


# per-operation cases, each run on 20 seeds
GRAD_CASES = (
    GradCase("shift_spatial", case_shift_spatial),
    GradCase("shift_temporal", case_shift_temporal),
    GradCase("wkv_scan", case_wkv_scan),
    GradCase("wkv_guided_sublayer", case_wkv_guided),
    GradCase("channel_attention", case_channel_attention),
    GradCase("adaln", _block_case("spatial", "wkv", lambda n: n.startswith("adaln"), frames=3, grid=(2, 2))),
    GradCase("ffn", _block_case("temporal", "wkv", lambda n: n.startswith("ffn"), frames=3, grid=(2, 2))),
    GradCase("embed_head", case_embed_head),
)

# whole blocks on a 2-frame 4x4 token grid (3 frames for the temporal block,
# since with two frames the decay has no effect and its gradient is identically 0)
BLOCK_CASES = (
    GradCase("block_spatial", _block_case("spatial", "wkv")),
    GradCase("block_temporal", _block_case("temporal", "wkv", frames=3)),
    GradCase("block_channel", _block_case("channel", "channel")),
)


def run_gradcheck_suite(seeds=range(20), cases=GRAD_CASES, eps: float = 1e-5) -> list[tuple[str, int, float]]:
    """``[(case, seed, max_rel_err), ...]`` for every case and seed."""
    rows = []
    for case in cases:
        for seed in seeds:
            stream = RngStream(seed).spawn(f"gradcheck-{case.name}")
            rows.append((case.name, seed, case.run(stream, eps)))
    return rows
