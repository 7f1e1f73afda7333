"""
Checkpoint archives.

A checkpoint is a `torch.save` zip archive (little-endian storages) of

    {"format": "framesetu-checkpoint", "version": 1,
     "model_config": {...}, "state_dict": {...},
     "optimizer": {...} | None, "scheduler": {...} | None,
     "iteration": int, "rng_state": ByteTensor | None,
     "train_config": {...} | None}

The model is always rebuilt from `model_config` before weights are loaded.
"""

import hashlib
import logging
import os

import torch

from ..errors import CheckpointError, ConfigError
from ..model.config import ModelConfig
from ..model.pipeline import FrameInterpolator

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "framesetu-checkpoint"
CHECKPOINT_VERSION = 1
REQUIRED_KEYS = ("format", "version", "model_config", "state_dict", "iteration")


def save_checkpoint(path, model, optimizer=None, scheduler=None, iteration=0,
                    rng_state=None, train_config=None):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "iteration": int(iteration),
        "rng_state": rng_state,
        "train_config": train_config,
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)
    logger.info(f"[Checkpoint] Saved {path} (iteration {iteration})")
    return path


def load_checkpoint(path):
    """Read and validate an archive; returns the raw payload dict."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"{path}: not a readable checkpoint archive ({e})") from e

    if not isinstance(payload, dict):
        raise CheckpointError(f"{path}: archive does not hold a checkpoint dict")
    missing = [k for k in REQUIRED_KEYS if k not in payload]
    if missing:
        raise CheckpointError(f"{path}: missing keys {missing}")
    if payload["format"] != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: format {payload['format']!r}, expected {CHECKPOINT_FORMAT!r}")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {payload['version']} is not supported (expected {CHECKPOINT_VERSION})"
        )
    return payload


def restore_model(path):
    """Rebuild the interpolator recorded in a checkpoint. Returns (model, payload)."""
    payload = load_checkpoint(path)
    try:
        config = ModelConfig.from_dict(payload["model_config"])
    except (ConfigError, TypeError) as e:
        raise CheckpointError(f"{path}: invalid model config ({e})") from e
    model = FrameInterpolator(config)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        raise CheckpointError(f"{path}: weights do not match the recorded structure ({e})") from e
    model.eval()
    logger.info(f"[Checkpoint] Restored {path} (iteration {payload['iteration']})")
    return model, payload


def checkpoint_digest(state_dict):
    """SHA-1 over every entry's name and little-endian bytes, in state_dict order."""
    digest = hashlib.sha1()
    for name, tensor in state_dict.items():
        digest.update(name.encode("utf-8"))
        array = tensor.detach().cpu().contiguous().numpy()
        digest.update(array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes())
    return digest.hexdigest()


def file_digest(path):
    return checkpoint_digest(load_checkpoint(path)["state_dict"])
