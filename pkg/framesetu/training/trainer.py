"""
framesetu/training/trainer.py

Optimisation loop. The trainer only runs steps and broadcasts lifecycle
events; logging, loss files, checkpoint indexing and progress display live in
visitors (see visitors.py).

One torch.Generator drives every random draw of a run (batch indices, flow
noise, dequantisation, mask noise, latent sampling); its state is stored in
each checkpoint, so a resumed run continues the exact same sequence.
"""

import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields

import torch

from ..errors import ConfigError, DivergenceError
from ..model.config import ModelConfig
from ..model.pipeline import build_model
from ..seeding import make_generator
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SyntheticTripletDataset, collate_triplets
from .losses import LOSS_MODES, build_feature_extractor, total_loss
from .providers import FlowProviderFactory, provide_flows

logger = logging.getLogger(__name__)

NUM_THREADS = os.getenv("FRAMESETU_NUM_THREADS")


# ---------------------------------------------------------
# TrainConfig
# ---------------------------------------------------------
@dataclass
class TrainConfig:
    patch_size: int = 64
    batch_size: int = 8
    learning_rate: float = 5e-4
    halve_every_epochs: int = 20
    epoch_iterations: int = 500
    iterations: int = 2000
    mu: float = 0.2
    tau: float = 0.3
    t: float = 0.5
    seed: int = 0
    featnet_seed: int = 1234
    dataset_size: int = 2000
    checkpoint_every: int = 500
    log_every: int = 20
    output_dir: str = "runs/toy"
    loss_mode: str = "bidirectional"
    num_threads: int | None = None
    resume: str | None = None
    visitors: list | None = None
    flow_provider: dict = field(default_factory=lambda: {"type": "synthetic"})
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        positive = ("patch_size", "batch_size", "epoch_iterations", "halve_every_epochs",
                    "dataset_size", "checkpoint_every")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.mu < 0 or self.tau < 0:
            raise ConfigError("mu and tau must be >= 0")
        if not 0.0 < self.t < 1.0:
            raise ConfigError(f"t must lie in (0, 1), got {self.t}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        multiple = self.model.size_multiple
        if self.patch_size % multiple:
            raise ConfigError(
                f"patch_size {self.patch_size} must be divisible by {multiple} for this model schedule"
            )

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e

    def to_dict(self):
        return asdict(self)

    @property
    def halve_every(self):
        """Iterations between learning-rate halvings."""
        return self.epoch_iterations * self.halve_every_epochs


def lr_at(config, iteration):
    """Learning rate in effect for the step taken at `iteration` (0-based)."""
    return config.learning_rate * 0.5 ** (iteration // config.halve_every)


# ---------------------------------------------------------
# TrainContext - shared runtime state for visitors
# ---------------------------------------------------------
class TrainContext:
    def __init__(self, config):
        self.config = config
        self.iteration = 0
        self.lr = config.learning_rate
        self.last_loss = None
        self.last_checkpoint = None
        self.start_time = time.time()
        self.stats = {
            "iterations": 0,
            "checkpoints": 0,
            "divergences": 0,
        }

    def log(self, msg, level=logging.INFO):
        prefix = f"[Iter={self.iteration} LR={self.lr:.1e}]"
        logging.log(level, f"{prefix} {msg}")


# ---------------------------------------------------------
# Trainer - emits lifecycle events only
# ---------------------------------------------------------
class Trainer:
    def __init__(self, config, visitors=None, provider=None):
        self.config = config
        self.visitors = visitors or []
        self.provider = provider or FlowProviderFactory.build(config.flow_provider)

        threads = config.num_threads or (int(NUM_THREADS) if NUM_THREADS else None)
        if threads:
            torch.set_num_threads(threads)

        self.generator = make_generator(config.seed)
        self.model = build_model(config.model)
        self.featnet = build_feature_extractor(config.featnet_seed)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.learning_rate)
        self.scheduler = torch.optim.lr_scheduler.StepLR(
            self.optimizer, step_size=config.halve_every, gamma=0.5,
        )
        self.dataset = SyntheticTripletDataset(
            config.dataset_size, patch_size=config.patch_size, seed=config.seed, t=config.t,
        )
        self.start_iteration = 0
        self.last_checkpoint = None
        if config.resume:
            self.resume(config.resume)

    def resume(self, path):
        payload = load_checkpoint(path)
        if payload["model_config"] != self.config.model.to_dict():
            raise ConfigError(f"checkpoint {path} was trained with a different model config")
        self.model.load_state_dict(payload["state_dict"])
        if payload.get("optimizer") is not None:
            self.optimizer.load_state_dict(payload["optimizer"])
        if payload.get("scheduler") is not None:
            self.scheduler.load_state_dict(payload["scheduler"])
        if payload.get("rng_state") is not None:
            self.generator.set_state(payload["rng_state"])
        self.start_iteration = int(payload["iteration"])
        self.last_checkpoint = path
        logger.info(f"[Trainer] Resumed from {path} at iteration {self.start_iteration}")

    def _notify(self, event, context, *args):
        """Broadcast an event to all visitors."""
        for v in self.visitors:
            method = getattr(v, event, None)
            if callable(method):
                try:
                    method(context, *args)
                except Exception as e:
                    logging.exception(f"[Visitor Error] {v.__class__.__name__}.{event}: {e}")

    def next_batch(self):
        cfg = self.config
        indices = torch.randint(len(self.dataset), (cfg.batch_size,), generator=self.generator)
        triplets = [self.dataset[int(i)] for i in indices]
        flows = [provide_flows(self.provider, tr, self.generator) for tr in triplets]
        return collate_triplets(triplets, flows)

    def step(self, batch):
        self.model.train()
        self.optimizer.zero_grad()
        result = total_loss(
            self.model, batch, self.featnet, mu=self.config.mu,
            generator=self.generator, loss_mode=self.config.loss_mode,
        )
        result.total.backward()
        self.optimizer.step()
        self.scheduler.step()
        return result

    def checkpoint_path(self, iteration):
        return os.path.join(self.config.output_dir, f"checkpoint_{iteration:06d}.pt")

    def save(self, context):
        path = save_checkpoint(
            self.checkpoint_path(context.iteration), self.model,
            optimizer=self.optimizer, scheduler=self.scheduler,
            iteration=context.iteration, rng_state=self.generator.get_state(),
            train_config=self.config.to_dict(),
        )
        context.last_checkpoint = path
        context.stats["checkpoints"] += 1
        return path

    def train_loop(self):
        """Run the configured iterations, yielding each checkpoint path as it is written."""
        cfg = self.config
        os.makedirs(cfg.output_dir, exist_ok=True)
        context = TrainContext(cfg)
        context.visitors = self.visitors
        context.iteration = self.start_iteration
        context.last_checkpoint = self.last_checkpoint
        context.lr = lr_at(cfg, context.iteration)
        self._notify("on_train_start", context)

        while context.iteration < cfg.iterations:
            context.lr = self.optimizer.param_groups[0]["lr"]
            batch = self.next_batch()
            try:
                result = self.step(batch)
            except DivergenceError as e:
                e.last_checkpoint = context.last_checkpoint
                context.stats["divergences"] += 1
                context.log(f"[Trainer] Diverged: {e.diagnostics}", level=logging.ERROR)
                self._notify("on_divergence", context, e)
                raise

            context.iteration += 1
            context.stats["iterations"] += 1
            context.last_loss = result.diagnostics()
            self._notify("on_step_end", context)

            if context.iteration % cfg.checkpoint_every == 0 or context.iteration == cfg.iterations:
                path = self.save(context)
                self._notify("on_checkpoint", context, path)
                yield path

        self._notify("on_train_end", context)

    def run(self):
        return list(self.train_loop())


def train(config, visitors=None, provider=None):
    """Train to completion; returns the list of checkpoint paths written."""
    return Trainer(config, visitors=visitors, provider=provider).run()
