"""Versioned checkpoint container.

A checkpoint is a NumPy ``.npz`` archive holding

* ``meta``: UTF-8 JSON ``{"format", "version", "config", ...}`` as a uint8 array,
* ``params/<name>``: each model parameter as little-endian float32,
* ``ema/<name>``: the EMA shadow of the same parameter, when present.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Optional

import numpy as np
import torch

from .backbone import FEATDenoiser, ModelConfig
from .diffusion import EmaState

__all__ = ["FORMAT", "VERSION", "save_checkpoint", "load_checkpoint", "fingerprint"]

FORMAT = "feat-video-checkpoint"
VERSION = 1


def _f4(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().astype("<f4")


def fingerprint(model: torch.nn.Module) -> str:
    """SHA-256 over parameter names and float32 bytes, in registration order."""
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(_f4(p).tobytes())
    return h.hexdigest()


def save_checkpoint(
    path,
    model: FEATDenoiser,
    ema: Optional[EmaState] = None,
    extra: Optional[dict] = None,
) -> str:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "fingerprint": fingerprint(model),
    }
    if ema is not None:
        meta["ema"] = {"decay": ema.decay, "warmup": ema.warmup}
    meta.update(extra or {})
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, p in model.named_parameters():
        arrays[f"params/{name}"] = _f4(p)
    if ema is not None:
        for name, s in ema.shadow.items():
            arrays[f"ema/{name}"] = _f4(s)
    path = os.fspath(path)
    tmp = path + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[FEATDenoiser, Optional[EmaState], dict]:
    with np.load(os.fspath(path), allow_pickle=False) as archive:
        meta = json.loads(archive["meta"].tobytes().decode())
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path} is not a {FORMAT} file")
        if meta.get("version") != VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k[len("params/") :]: archive[k] for k in archive.files if k.startswith("params/")}
        shadow = {k[len("ema/") :]: archive[k] for k in archive.files if k.startswith("ema/")}

    model = FEATDenoiser(ModelConfig(**meta["config"]))
    own = dict(model.named_parameters())
    if set(own) != set(params):
        missing = set(own) ^ set(params)
        raise ValueError(f"checkpoint parameters do not match the config: {sorted(missing)[:5]}")
    with torch.no_grad():
        for name, value in params.items():
            own[name].copy_(torch.from_numpy(value.astype(np.float32)))

    ema = None
    if shadow:
        info = meta.get("ema", {})
        ema = EmaState(
            decay=info.get("decay", 0.9999),
            warmup=info.get("warmup", False),
            shadow={k: torch.from_numpy(v.astype(np.float32)) for k, v in shadow.items()},
        )
    return model, ema, meta
