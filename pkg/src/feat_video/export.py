"""Writing sampled clips as portable graymap/pixmap frames plus a JSON manifest."""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

__all__ = ["to_uint8", "write_sample"]


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to [0, 255], clipping out-of-range values."""
    return np.round((np.clip(frame, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def write_sample(clip: np.ndarray, out_dir: str, *, seed: int, fingerprint: str, prefix: str = "sample") -> dict:
    """Write one clip [F, C, H, W] and return its manifest.

    One channel gives ``.pgm`` frames and three channels ``.ppm`` frames;
    any other channel count is written as one ``.pgm`` per channel.
    """
    os.makedirs(out_dir, exist_ok=True)
    F, C, H, W = clip.shape
    files = []
    for f in range(F):
        if C == 1:
            name = f"{prefix}_f{f:03d}.pgm"
            Image.fromarray(to_uint8(clip[f, 0]), mode="L").save(os.path.join(out_dir, name))
            files.append(name)
        elif C == 3:
            name = f"{prefix}_f{f:03d}.ppm"
            Image.fromarray(to_uint8(clip[f].transpose(1, 2, 0)), mode="RGB").save(os.path.join(out_dir, name))
            files.append(name)
        else:
            for c in range(C):
                name = f"{prefix}_f{f:03d}_c{c}.pgm"
                Image.fromarray(to_uint8(clip[f, c]), mode="L").save(os.path.join(out_dir, name))
                files.append(name)
    manifest = {
        "frames": F,
        "shape": [F, C, H, W],
        "seed": seed,
        "checkpoint_fingerprint": fingerprint,
        "files": files,
    }
    with open(os.path.join(out_dir, f"{prefix}_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
