"""Synthetic clips of soft-edged blobs drifting at constant velocity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream

__all__ = ["SyntheticVideoSpec", "gen_dataset", "render_blobs"]


@dataclass(frozen=True)
class SyntheticVideoSpec:
    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 1
    n_blobs: int = 2
    speed: tuple = (0.5, 2.0)  # pixels per frame
    radius: tuple = (3.0, 6.0)
    softness: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if min(self.frames, self.height, self.width, self.channels) < 1:
            raise ValueError("frames, height, width and channels must be positive")
        if self.n_blobs < 1:
            raise ValueError("need at least one blob")
        lo, hi = self.radius
        if not 0 < lo <= hi:
            raise ValueError(f"invalid radius range {self.radius}")
        if hi >= min(self.height, self.width) / 2:
            raise ValueError(
                f"blob radius {hi} must be smaller than half the frame ({min(self.height, self.width) / 2})"
            )
        if not 0 <= self.speed[0] <= self.speed[1]:
            raise ValueError(f"invalid speed range {self.speed}")
        if self.softness <= 0:
            raise ValueError("softness must be positive")


def _reflect(pos: float, vel: float, lo: float, hi: float) -> tuple[float, float]:
    while pos < lo or pos > hi:
        if pos < lo:
            pos, vel = 2 * lo - pos, -vel
        else:
            pos, vel = 2 * hi - pos, -vel
    return pos, vel


def render_blobs(centers, radii, colors, spec: SyntheticVideoSpec) -> np.ndarray:
    """One frame [C, H, W] in [-1, 1] from blob centres (row, col)."""
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    canvas = np.zeros((spec.channels, spec.height, spec.width))
    for (cy, cx), r, color in zip(centers, radii, colors):
        dist = np.hypot(yy - cy, xx - cx)
        mask = 1.0 / (1.0 + np.exp(-(r - dist) / spec.softness))
        canvas += color[:, None, None] * mask
    return 2.0 * np.clip(canvas, 0.0, 1.0) - 1.0


def _clip(spec: SyntheticVideoSpec, stream: RngStream) -> np.ndarray:
    n = spec.n_blobs
    radii = spec.radius[0] + (spec.radius[1] - spec.radius[0]) * stream.uniform(n)
    speeds = spec.speed[0] + (spec.speed[1] - spec.speed[0]) * stream.uniform(n)
    angles = 2 * np.pi * stream.uniform(n)
    start = stream.uniform((n, 2))
    colors = 0.5 + 0.5 * stream.uniform((n, spec.channels))

    state = []
    for i in range(n):
        lo, (hi_y, hi_x) = radii[i], (spec.height - 1 - radii[i], spec.width - 1 - radii[i])
        py = lo + start[i, 0] * (hi_y - lo)
        px = lo + start[i, 1] * (hi_x - lo)
        state.append([py, px, speeds[i] * np.sin(angles[i]), speeds[i] * np.cos(angles[i])])

    frames = []
    for _ in range(spec.frames):
        frames.append(render_blobs([(s[0], s[1]) for s in state], radii, colors, spec))
        for i, s in enumerate(state):
            r = radii[i]
            s[0], s[2] = _reflect(s[0] + s[2], s[2], r, spec.height - 1 - r)
            s[1], s[3] = _reflect(s[1] + s[3], s[3], r, spec.width - 1 - r)
    return np.stack(frames).astype(np.float32)


def gen_dataset(spec: SyntheticVideoSpec, n_clips: int) -> list[np.ndarray]:
    """``n_clips`` clips of shape [F, C, H, W]; clip ``i`` depends only on (seed, i)."""
    spec.validate()
    root = RngStream(spec.seed).spawn("synthetic-video")
    return [_clip(spec, root.spawn(f"clip{i}")) for i in range(n_clips)]
