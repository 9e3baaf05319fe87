"""Random streams and finite-difference gradient verification.

Autodiff itself is delegated to ``torch``; this module provides the pieces
that must stay independent of it: a counter-based Gaussian stream used for
every random draw in the package, and a central-difference gradient checker.

The stream identity is fixed: Gaussian variate number ``c`` of stream
``seed`` is element ``c % BLOCK`` of
``Generator(Philox(key=seed, counter=[0, 0, 0, c // BLOCK])).standard_normal(BLOCK)``.
Uniforms and integers are derived from the same sequence through the normal
CDF, so ``(seed, counter)`` alone reproduces the stream.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch
from scipy.special import ndtr

__all__ = [
    "BLOCK",
    "RngStream",
    "rng_next_gaussian",
    "GradCheckError",
    "GradCheckReport",
    "grad_check",
    "grad_check_params",
    "init_xavier_",
    "init_normal_",
    "init_constant_",
]

BLOCK = 4096
_MASK64 = (1 << 64) - 1


def _block(seed: int, index: int) -> np.ndarray:
    bitgen = np.random.Philox(key=seed & _MASK64, counter=[0, 0, 0, index])
    return np.random.Generator(bitgen).standard_normal(BLOCK)


@dataclass
class RngStream:
    """Counter-based Gaussian stream.

    ``counter`` is the number of variates consumed so far; two streams with
    the same ``(seed, counter)`` produce the same future values.
    """

    seed: int
    counter: int = 0
    _cache_index: int = field(default=-1, repr=False, compare=False)
    _cache: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def _get_block(self, index: int) -> np.ndarray:
        if index != self._cache_index:
            self._cache = _block(self.seed, index)
            self._cache_index = index
        return self._cache

    def next_gaussian(self) -> float:
        b, pos = divmod(self.counter, BLOCK)
        value = float(self._get_block(b)[pos])
        self.counter += 1
        return value

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        out = np.empty(n, dtype=np.float64)
        filled = 0
        while filled < n:
            b, pos = divmod(self.counter, BLOCK)
            take = min(BLOCK - pos, n - filled)
            out[filled : filled + take] = self._get_block(b)[pos : pos + take]
            filled += take
            self.counter += take
        return out.reshape(shape).astype(dtype, copy=False)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform(0, 1) variates, one Gaussian consumed per value."""
        return ndtr(self.normal(shape))

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(shape)
        out = low + np.floor(u * (high - low)).astype(np.int64)
        return np.minimum(out, high - 1)

    def spawn(self, tag: str) -> "RngStream":
        """Independent child stream named by ``tag`` (does not advance self)."""
        seq = np.random.SeedSequence([self.seed & _MASK64, zlib.crc32(tag.encode())])
        return RngStream(int(seq.generate_state(1, dtype=np.uint64)[0]))


def rng_next_gaussian(stream: RngStream) -> float:
    return stream.next_gaussian()


class GradCheckError(ArithmeticError):
    pass


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_err < tol


def grad_check(
    f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, eps: float = 1e-6
) -> GradCheckReport:
    """Compare the autograd gradient of scalar ``f`` at ``x`` with central differences.

    Relative error per coordinate is ``|a - b| / max(|a|, |b|, floor)``. The
    difference quotient carries rounding noise of about ``u |f| / eps``
    (``u`` the float64 unit roundoff), so ``floor`` is the larger of 1e-8 and
    1e4 times that noise; below it a derivative cannot be told from zero.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    x = x.detach().to(torch.float64).clone()

    xg = x.clone().requires_grad_(True)
    y = f(xg)
    if y.numel() != 1:
        raise ValueError("f must return a scalar")
    if not torch.isfinite(y).all():
        raise GradCheckError("f is not finite at the base point")
    (g,) = torch.autograd.grad(y, xg, allow_unused=True)
    analytic = np.zeros(x.shape) if g is None else g.detach().numpy().copy()

    numeric = np.empty(x.shape)
    flat = x.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = f(x).item()
            flat[i] = orig - eps
            fm = f(x).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                idx = tuple(int(j) for j in np.unravel_index(i, x.shape))
                raise GradCheckError(f"non-finite f value when perturbing coordinate {idx}")
            numeric.flat[i] = (fp - fm) / (2 * eps)

    floor = max(1e-8, 1e4 * np.finfo(np.float64).eps * abs(y.item()) / eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    if rel.size == 0:
        return GradCheckReport(0.0, (), analytic, numeric)
    worst = int(np.argmax(rel))
    return GradCheckReport(
        float(rel.flat[worst]), tuple(int(j) for j in np.unravel_index(worst, x.shape)), analytic, numeric
    )


def grad_check_params(
    module: torch.nn.Module,
    inputs: tuple,
    reduce: Callable[[torch.Tensor], torch.Tensor],
    names: Optional[list[str]] = None,
    eps: float = 1e-6,
) -> dict[str, GradCheckReport]:
    """Run :func:`grad_check` on each named parameter of a float64 module.

    The checked function is ``reduce(module(*inputs))`` with one parameter
    swapped for the probe value at a time.
    """
    params = dict(module.named_parameters())
    reports = {}
    for name in names or list(params):

        def f(value, name=name):
            return reduce(torch.func.functional_call(module, {name: value}, inputs))

        reports[name] = grad_check(f, params[name].detach(), eps)
    return reports


# --- deterministic initialisers -------------------------------------------
# Every learnable tensor is filled from an RngStream so that a model seed pins
# the initial weights bit-for-bit. Meta tensors (used for counting) are skipped.


def init_xavier_(param: torch.Tensor, stream: RngStream) -> torch.Tensor:
    if param.is_meta:
        return param
    fan_out, fan_in = param.shape[0], int(np.prod(param.shape[1:]))
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    values = (2.0 * stream.uniform(tuple(param.shape)) - 1.0) * bound
    with torch.no_grad():
        param.copy_(torch.from_numpy(values))
    return param


def init_normal_(param: torch.Tensor, stream: RngStream, std: float) -> torch.Tensor:
    if param.is_meta:
        return param
    with torch.no_grad():
        param.copy_(torch.from_numpy(std * stream.normal(tuple(param.shape))))
    return param


def init_constant_(param: torch.Tensor, value) -> torch.Tensor:
    if param.is_meta:
        return param
    with torch.no_grad():
        param.copy_(torch.as_tensor(value, dtype=param.dtype))
    return param
