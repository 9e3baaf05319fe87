"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

__all__ = ["check_video_array", "check_timesteps", "check_positive_int"]


def check_video_array(X, *, allow_single: bool = False, dtype=np.float32, expected_shape=None) -> np.ndarray:
    """Validate a batch of clips shaped [n, frames, channels, height, width].

    A single clip [frames, channels, height, width] is promoted to a batch of
    one when ``allow_single`` is set. Values must be finite.
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=dtype, ensure_all_finite=True)
    if X.ndim == 4 and allow_single:
        X = X[None]
    if X.ndim != 5:
        raise ValueError(
            f"expected clips shaped (n_clips, frames, channels, height, width), got array of shape {X.shape}"
        )
    if X.shape[0] < 1:
        raise ValueError("need at least one clip")
    if expected_shape is not None and tuple(X.shape[1:]) != tuple(expected_shape):
        raise ValueError(f"clips must have shape {tuple(expected_shape)}, got {tuple(X.shape[1:])}")
    return X


def check_timesteps(t, n: int, T: int) -> np.ndarray:
    """Broadcast ``t`` to ``n`` integer timesteps in ``[1, T]``."""
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(np.equal(np.mod(t, 1), 0)):
            raise ValueError("timesteps must be integers")
        t = t.astype(np.int64)
    t = np.broadcast_to(t, (n,)).astype(np.int64)
    if t.min() < 1 or t.max() > T:
        raise ValueError(f"timesteps must lie in [1, {T}], got range [{t.min()}, {t.max()}]")
    return t


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
