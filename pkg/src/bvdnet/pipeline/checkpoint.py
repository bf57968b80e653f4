"""Checkpoint archives: weights keyed by layer path, the serialised model
config and its hash, the step counter, optimizer moments and the data RNG."""
from __future__ import annotations

import io
import os
import pickle
import zipfile
from dataclasses import dataclass
from pathlib import Path

import torch

from ..model import BVDNet, ModelConfig, build_model

FORMAT = "bvdnet-checkpoint-v1"


class CheckpointError(RuntimeError):
    """Unreadable or internally inconsistent checkpoint."""


class ConfigMismatchError(CheckpointError):
    """Checkpoint was written for a different model configuration."""


@dataclass
class Checkpoint:
    model: BVDNet
    config: ModelConfig
    step: int
    optimizer_state: dict | None = None
    rng_state: dict | None = None
    extra: dict | None = None


def save_checkpoint(model: BVDNet, optimizer_state: dict | None, step: int, path, rng_state: dict | None = None, extra: dict | None = None) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = model.config
    payload = {
        "format": FORMAT,
        "config": cfg.to_text(),
        "config_hash": cfg.digest(),
        "step": int(step),
        "model": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "optimizer": optimizer_state,
        "rng": rng_state,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, pickle.UnpicklingError, zipfile.BadZipFile, EOFError, ValueError, OSError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint archive ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} archive")
    try:
        cfg = ModelConfig.from_text(payload["config"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable model config ({exc})") from exc
    if cfg.digest() != payload.get("config_hash"):
        raise ConfigMismatchError(f"{path}: stored config does not match its hash (edited archive?)")
    if expected_config is not None and expected_config.digest() != cfg.digest():
        raise ConfigMismatchError(
            f"{path}: checkpoint config hash {cfg.digest()[:12]} differs from requested config {expected_config.digest()[:12]}"
        )
    model = build_model(cfg)
    try:
        model.load_state_dict(payload["model"], strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: weights do not fit the stored config ({exc})") from exc
    model.eval()
    return Checkpoint(
        model=model,
        config=cfg,
        step=int(payload["step"]),
        optimizer_state=payload.get("optimizer"),
        rng_state=payload.get("rng"),
        extra=payload.get("extra"),
    )
