"""8-bit RGB PNG frames. Floats map to bytes as round(255·v) and back as v/255."""

import json
import logging
import os

import numpy as np
import torch
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from ..errors import ValidationError

logger = logging.getLogger(__name__)

SCENE_KEY = "framesetu:scene"


def to_bytes(frame):
    """3×H×W float tensor in [0, 1] -> H×W×3 uint8 array (clamped)."""
    array = frame.detach().cpu().double().clamp(0.0, 1.0).numpy().transpose(1, 2, 0)
    return np.round(array * 255.0).astype(np.uint8)


def from_bytes(array):
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1))).float() / 255.0


def write_frame(path, frame, scene=None):
    if frame.dim() != 3 or frame.shape[0] != 3:
        raise ValidationError(f"frame to write must be 3×H×W, got {tuple(frame.shape)}")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    info = PngInfo()
    if scene is not None:
        info.add_text(SCENE_KEY, json.dumps(scene, sort_keys=True))
    Image.fromarray(to_bytes(frame), mode="RGB").save(path, format="PNG", pnginfo=info)
    return path


def read_frame(path):
    """Returns (3×H×W float tensor, scene dict or None)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"frame not found: {path}")
    with Image.open(path) as img:
        scene_text = getattr(img, "text", {}).get(SCENE_KEY)
        array = np.asarray(img.convert("RGB"))
    scene = None
    if scene_text:
        try:
            scene = json.loads(scene_text)
        except json.JSONDecodeError:
            logger.warning(f"[Frames] {path}: unreadable scene tag ignored")
    return from_bytes(array), scene
