"""
Middlebury .flo files: float32 magic 202021.25, int32 width, int32 height,
then H·W interleaved float32 (u, v) pairs in row-major order. Always
little-endian regardless of host byte order.
"""

import logging
import os

import numpy as np
import torch

from ..errors import FlowFormatError

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


def read_flow_file(path):
    """Returns an H×W×2 float32 array; channel 0 is horizontal."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"flow file not found: {path}")
    with open(path, "rb") as f:
        payload = f.read()

    if len(payload) < 12:
        raise FlowFormatError(f"{path}: truncated header ({len(payload)} bytes, expected 12)")
    magic = np.frombuffer(payload, _F32, count=1, offset=0)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC}")
    w, h = (int(v) for v in np.frombuffer(payload, _I32, count=2, offset=4))
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: invalid dimensions {w}×{h}")

    expected = 12 + 8 * w * h
    if len(payload) < expected:
        raise FlowFormatError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected} for {w}×{h})"
        )
    if len(payload) > expected:
        logger.warning(f"[Flow] {path}: {len(payload) - expected} trailing bytes ignored")
    data = np.frombuffer(payload, _F32, count=2 * w * h, offset=12)
    return data.reshape(h, w, 2).astype(np.float32)


def write_flow_file(path, flow):
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise FlowFormatError(f"flow to write must be H×W×2, got {flow.shape}")
    h, w = flow.shape[:2]
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(np.array([FLO_MAGIC], dtype=_F32).tobytes())
        f.write(np.array([w, h], dtype=_I32).tobytes())
        f.write(np.ascontiguousarray(flow, dtype=_F32).tobytes())


def flow_to_tensor(flow):
    """H×W×2 array -> 2×H×W float tensor."""
    return torch.from_numpy(np.ascontiguousarray(flow.transpose(2, 0, 1)))


def tensor_to_flow(flow):
    return flow.detach().cpu().numpy().transpose(1, 2, 0)
