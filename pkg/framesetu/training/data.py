"""
framesetu/training/data.py

Synthetic frame triplets with exact ground-truth flows.

A scene is a smooth procedural background with textured rigid shapes
(rectangles and discs) drawn on top in order. Between frame 0 and frame 1
each shape translates by its `velocity` and rotates by `rotation` radians
about its centre; the background is static. Every pixel colour is a
function of the shape-local coordinate, so frames at any time s in [0, 1]
are rendered exactly and the flows are the analytic displacements of the
topmost surface. Occlusions appear wherever a shape uncovers background.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch.utils.data import Dataset

from ..errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

MIN_SIZE = 8
SHAPE_KINDS = ("rect", "disc")
TEXTURE_WAVES = 3


# ---------------------------------------------------------
# Scene description
# ---------------------------------------------------------
@dataclass
class ShapeSpec:
    kind: str
    center: tuple[float, float]
    radius: float
    velocity: tuple[float, float] = (0.0, 0.0)
    rotation: float = 0.0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValidationError(f"shape kind must be one of {SHAPE_KINDS}, got {self.kind!r}")
        if self.radius <= 0:
            raise ValidationError(f"shape radius must be > 0, got {self.radius}")
        self.center = tuple(float(c) for c in self.center)
        self.velocity = tuple(float(v) for v in self.velocity)


@dataclass
class MotionSpec:
    shapes: list[ShapeSpec] = field(default_factory=list)

    @classmethod
    def random(cls, rng, size, num_shapes=3, max_shift=None, max_rotation=0.2):
        h, w = size
        max_shift = max(h, w) / 8 if max_shift is None else max_shift
        shapes = []
        for _ in range(num_shapes):
            radius = float(rng.uniform(min(h, w) / 8, min(h, w) / 4))
            shapes.append(ShapeSpec(
                kind=SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))],
                center=(float(rng.uniform(0, w - 1)), float(rng.uniform(0, h - 1))),
                radius=radius,
                velocity=tuple(float(v) for v in rng.uniform(-max_shift, max_shift, size=2)),
                rotation=float(rng.uniform(-max_rotation, max_rotation)),
            ))
        return cls(shapes=shapes)

    @classmethod
    def from_dict(cls, data):
        return cls(shapes=[ShapeSpec(**s) for s in data.get("shapes", [])])

    def to_dict(self):
        return {"shapes": [asdict(s) for s in self.shapes]}

    def is_static(self):
        return all(tuple(s.velocity) == (0.0, 0.0) and s.rotation == 0.0 for s in self.shapes)


@dataclass
class Triplet:
    """One training sample. Frames are 3×H×W in [0, 1]; flows 2×H×W in pixels."""

    I0: torch.Tensor
    I1: torch.Tensor
    It: torch.Tensor
    t: float
    flow01: torch.Tensor | None = None
    flow10: torch.Tensor | None = None
    key: str = ""
    scene: dict | None = None

    def __post_init__(self):
        if not 0.0 < self.t < 1.0:
            raise ValidationError(f"triplet time t={self.t} must lie in (0, 1)")
        if not (self.I0.shape == self.I1.shape == self.It.shape):
            raise ShapeError(
                f"triplet frames disagree: {tuple(self.I0.shape)}, {tuple(self.I1.shape)}, {tuple(self.It.shape)}"
            )
        for name in ("flow01", "flow10"):
            flow = getattr(self, name)
            if flow is not None and tuple(flow.shape) != (2, *self.I0.shape[1:]):
                raise ShapeError(f"{name} shape {tuple(flow.shape)} does not match frames {tuple(self.I0.shape)}")


# ---------------------------------------------------------
# Rendering
# ---------------------------------------------------------
def _texture_params(rng):
    """Base colour plus a few oriented sinusoids per channel."""
    return {
        "base": rng.uniform(0.25, 0.75, size=3),
        "freq": rng.uniform(-0.6, 0.6, size=(TEXTURE_WAVES, 2)),
        "phase": rng.uniform(0, 2 * np.pi, size=TEXTURE_WAVES),
        "amp": rng.uniform(0.03, 0.12, size=(TEXTURE_WAVES, 3)),
    }


def _texture(params, qx, qy):
    out = np.broadcast_to(params["base"], qx.shape + (3,)).copy()
    for k in range(TEXTURE_WAVES):
        wave = np.sin(params["freq"][k, 0] * qx + params["freq"][k, 1] * qy + params["phase"][k])
        out += wave[..., None] * params["amp"][k]
    return np.clip(out, 0.0, 1.0)


def _pose(shape, s):
    """Centre and angle of a shape at time s."""
    cx, cy = shape.center
    vx, vy = shape.velocity
    return cx + s * vx, cy + s * vy, s * shape.rotation


def _to_local(shape, s, x, y):
    cx, cy, angle = _pose(shape, s)
    dx, dy = x - cx, y - cy
    if angle == 0.0:
        return dx, dy
    c, sn = np.cos(angle), np.sin(angle)
    return c * dx + sn * dy, -sn * dx + c * dy


def _from_local(shape, s, qx, qy):
    cx, cy, angle = _pose(shape, s)
    if angle == 0.0:
        return qx + cx, qy + cy
    c, sn = np.cos(angle), np.sin(angle)
    return c * qx - sn * qy + cx, sn * qx + c * qy + cy


def _inside(shape, qx, qy):
    if shape.kind == "disc":
        return qx ** 2 + qy ** 2 <= shape.radius ** 2
    return (np.abs(qx) <= shape.radius) & (np.abs(qy) <= shape.radius)


def render_frame(motion, textures, background, size, s):
    """Render the scene at time s; returns (H×W×3 image, H×W topmost-shape index, -1 = background)."""
    h, w = size
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    image = _texture(background, x, y)
    owner = np.full((h, w), -1, dtype=np.int64)
    for i, shape in enumerate(motion.shapes):
        qx, qy = _to_local(shape, s, x, y)
        hit = _inside(shape, qx, qy)
        image[hit] = _texture(textures[i], qx[hit], qy[hit])
        owner[hit] = i
    return image, owner


def _flow_between(motion, size, s_from, s_to):
    """Displacement of the topmost surface at time s_from to its position at s_to."""
    h, w = size
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    flow = np.zeros((h, w, 2), dtype=np.float64)
    for shape in motion.shapes:
        qx, qy = _to_local(shape, s_from, x, y)
        hit = _inside(shape, qx, qy)
        tx, ty = _from_local(shape, s_to, qx, qy)
        flow[hit, 0] = tx[hit] - x[hit]
        flow[hit, 1] = ty[hit] - y[hit]
    # later shapes overwrite earlier ones, matching draw order
    return flow


def _check_size(size):
    h, w = size
    if h < MIN_SIZE or w < MIN_SIZE:
        raise ValidationError(f"triplet size {h}×{w} is degenerate; both sides must be >= {MIN_SIZE}")
    if h % 2 or w % 2:
        raise ShapeError(f"triplet size {h}×{w} must be even")


def _chw(array):
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1), dtype=np.float32))


def synth_triplet(seed, size, motion_spec=None, t=0.5):
    """
    Render (I0, I1, It) and the exact flows F01, F10 for a seeded scene.
    `size` is (H, W) or a single int. Without a motion spec the geometry is
    drawn from the seed as well.
    """
    if isinstance(size, int):
        size = (size, size)
    size = tuple(int(s) for s in size)
    _check_size(size)
    t = float(t)
    if not 0.0 < t < 1.0:
        raise ValidationError(f"t={t} must lie in (0, 1)")

    rng = np.random.default_rng(seed)
    background = _texture_params(rng)
    if motion_spec is None:
        motion_spec = MotionSpec.random(rng, size)
    textures = [_texture_params(rng) for _ in motion_spec.shapes]

    I0, _ = render_frame(motion_spec, textures, background, size, 0.0)
    if motion_spec.is_static():
        I1 = It = I0
        flow01 = flow10 = np.zeros((*size, 2), dtype=np.float32)
    else:
        I1, _ = render_frame(motion_spec, textures, background, size, 1.0)
        It, _ = render_frame(motion_spec, textures, background, size, t)
        flow01 = _flow_between(motion_spec, size, 0.0, 1.0)
        flow10 = _flow_between(motion_spec, size, 1.0, 0.0)

    scene = {"seed": int(seed), "size": list(size), "t": t, "motion": motion_spec.to_dict()}
    return Triplet(
        I0=_chw(I0), I1=_chw(I1), It=_chw(It), t=t,
        flow01=_chw(flow01), flow10=_chw(flow10),
        key=f"synth-{seed}", scene=scene,
    )


def triplet_from_scene(scene):
    """Re-render a triplet from the scene tag written next to exported frames."""
    try:
        return synth_triplet(
            scene["seed"], tuple(scene["size"]), MotionSpec.from_dict(scene["motion"]), scene["t"],
        )
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed scene description: {e}") from e


# ---------------------------------------------------------
# Dataset
# ---------------------------------------------------------
class SyntheticTripletDataset(Dataset):
    """Item i is the triplet of seed (base_seed, i); rendering is lazy and deterministic."""

    def __init__(self, length, patch_size=64, seed=0, t=0.5):
        if length < 1:
            raise ValidationError(f"dataset length must be >= 1, got {length}")
        self.length = int(length)
        self.patch_size = int(patch_size)
        self.seed = int(seed)
        self.t = float(t)
        logger.info(f"[Dataset] Synthetic triplets: n={self.length} size={self.patch_size} seed={self.seed}")

    def __len__(self):
        return self.length

    def item_seed(self, index):
        return int(np.random.SeedSequence([self.seed, index]).generate_state(1)[0])

    def __getitem__(self, index):
        if not 0 <= index < self.length:
            raise IndexError(index)
        return synth_triplet(self.item_seed(index), self.patch_size, t=self.t)


def collate_triplets(triplets, flows):
    """Stack triplets and their provided (flow01, flow10) pairs into batch tensors."""
    I0 = torch.stack([tr.I0 for tr in triplets])
    I1 = torch.stack([tr.I1 for tr in triplets])
    It = torch.stack([tr.It for tr in triplets])
    flow01 = torch.stack([f[0] for f in flows])
    flow10 = torch.stack([f[1] for f in flows])
    ts = {tr.t for tr in triplets}
    if len(ts) != 1:
        raise ValidationError(f"a batch must share one time t, got {sorted(ts)}")
    return {"I0": I0, "I1": I1, "It": It, "flow01": flow01, "flow10": flow10, "t": ts.pop()}
