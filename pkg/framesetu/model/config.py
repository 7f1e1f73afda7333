"""Structural model schedule; stored verbatim inside every checkpoint."""

from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError

MASK_MODES = ("quasi_binary", "binary", "adaptive")
ATTENTION_NORMS = ("sigmoid", "softmax")


@dataclass
class ModelConfig:
    channel_plan: list[int] = field(default_factory=lambda: [32, 64, 96])
    flow_levels: int = 3
    flow_steps: int = 4
    coupling_hidden: int = 64
    cond_channels: int = 32
    importance_hidden: int = 32
    align_hidden: int = 64
    adm_channels: int = 16
    offset_groups: int = 9
    occlusion_eps: float = 0.5
    alpha: float = 1e-3
    beta: float = 2.0
    mask_mode: str = "quasi_binary"
    attention_norm: str = "sigmoid"
    use_alignment_prior: bool = True
    learned_split_prior: bool = False
    seed: int = 0

    def __post_init__(self):
        self.channel_plan = [int(c) for c in self.channel_plan]
        if not self.channel_plan:
            raise ConfigError("model.channel_plan must not be empty")
        if self.flow_levels < 1 or self.flow_steps < 1:
            raise ConfigError("model.flow_levels and model.flow_steps must be >= 1")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"model.mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.attention_norm not in ATTENTION_NORMS:
            raise ConfigError(
                f"model.attention_norm must be one of {ATTENTION_NORMS}, got {self.attention_norm!r}"
            )
        if self.occlusion_eps <= 0:
            raise ConfigError("model.occlusion_eps must be > 0")
        if self.alpha < 0:
            raise ConfigError("model.alpha must be >= 0")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown model config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    @property
    def size_multiple(self):
        """Frame height and width must be multiples of this."""
        return 2 ** max(len(self.channel_plan) - 1, self.flow_levels)
