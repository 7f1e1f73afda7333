"""
framesetu/training/providers.py

Flow providers stand in for frozen motion estimators: they return
(flow01, flow10) for a triplet, always detached from any autograd graph.
"""

import logging
import os
from abc import ABC, abstractmethod

import torch

from ..errors import ConfigError, ShapeError, ValidationError
from ..io.flo import flow_to_tensor, read_flow_file

logger = logging.getLogger(__name__)


class FlowProvider(ABC):
    @abstractmethod
    def flows(self, triplet, generator=None):
        """Return (flow01, flow10), each 2×H×W."""


class SyntheticFlowProvider(FlowProvider):
    """Analytic ground-truth flows carried by synthetic triplets."""

    def flows(self, triplet, generator=None):
        if triplet.flow01 is None or triplet.flow10 is None:
            raise ValidationError(
                f"triplet {triplet.key!r} carries no ground-truth flows; "
                "supply flow files for real frames"
            )
        return triplet.flow01, triplet.flow10


class FileFlowProvider(FlowProvider):
    """
    Reads Middlebury files named by a template, e.g.
    "flows/{key}_{direction}.flo" with direction in {"01", "10"}.
    """

    def __init__(self, template):
        if "{direction}" not in template:
            raise ConfigError("file flow template must contain '{direction}'")
        self.template = template

    def path(self, key, direction):
        return self.template.format(key=key, direction=direction)

    def flows(self, triplet, generator=None):
        out = []
        for direction in ("01", "10"):
            path = self.path(triplet.key, direction)
            if not os.path.exists(path):
                raise FileNotFoundError(f"missing flow file for {triplet.key!r}: {path}")
            out.append(flow_to_tensor(read_flow_file(path)))
        return tuple(out)


class NoisyFlowProvider(FlowProvider):
    """Perturbs another provider's flows with iid Gaussian noise of std `sigma` pixels."""

    def __init__(self, base, sigma=0.5):
        if sigma < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {sigma}")
        self.base = base
        self.sigma = float(sigma)

    def flows(self, triplet, generator=None):
        flow01, flow10 = self.base.flows(triplet, generator)
        noisy = []
        for flow in (flow01, flow10):
            noise = torch.randn(flow.shape, generator=generator, dtype=flow.dtype)
            noisy.append(flow + self.sigma * noise)
        return tuple(noisy)


class RandomChoiceProvider(FlowProvider):
    """Picks one of several providers per triplet, like sampling among motion estimators."""

    def __init__(self, providers):
        if not providers:
            raise ConfigError("random_choice provider needs at least one member")
        self.providers = list(providers)

    def flows(self, triplet, generator=None):
        index = int(torch.randint(len(self.providers), (1,), generator=generator).item())
        return self.providers[index].flows(triplet, generator)


# ---------------------------------------------------------
# Factory
# ---------------------------------------------------------
class FlowProviderFactory:
    registry = {
        "synthetic": SyntheticFlowProvider,
        "file": FileFlowProvider,
        "noisy": NoisyFlowProvider,
        "random_choice": RandomChoiceProvider,
    }

    @classmethod
    def build(cls, config=None):
        """
        config: {"type": "synthetic"} | {"type": "file", "template": ...} |
                {"type": "noisy", "sigma": 0.5, "base": {...}} |
                {"type": "random_choice", "providers": [{...}, ...]}
        """
        config = dict(config or {"type": "synthetic"})
        kind = config.pop("type", "synthetic")
        if kind not in cls.registry:
            raise ConfigError(f"Unknown flow provider type: {kind!r}; known: {sorted(cls.registry)}")
        try:
            if kind == "noisy":
                base = cls.build(config.pop("base", None))
                provider = NoisyFlowProvider(base, **config)
            elif kind == "random_choice":
                members = [cls.build(c) for c in config.pop("providers", [])]
                provider = RandomChoiceProvider(members, **config)
            else:
                provider = cls.registry[kind](**config)
        except TypeError as e:
            raise ConfigError(f"invalid options for flow provider {kind!r}: {e}") from e
        logger.info(f"[FlowProvider] Built {provider.__class__.__name__}")
        return provider


def provide_flows(provider, triplet, generator=None):
    """Flows for a triplet, detached and checked against the frame size."""
    flow01, flow10 = provider.flows(triplet, generator)
    expected = (2, *triplet.I0.shape[1:])
    for name, flow in (("flow01", flow01), ("flow10", flow10)):
        if tuple(flow.shape) != expected:
            raise ShapeError(
                f"{name} for {triplet.key!r} has shape {tuple(flow.shape)}, frames need {expected}"
            )
    return flow01.detach().to(triplet.I0.dtype), flow10.detach().to(triplet.I0.dtype)
