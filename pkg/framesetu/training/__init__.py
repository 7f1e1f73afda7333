from .data import MotionSpec, ShapeSpec, SyntheticTripletDataset, Triplet, synth_triplet
from .losses import latent_matched_sample, perceptual_loss, total_loss
from .providers import FlowProviderFactory, provide_flows
from .trainer import TrainConfig, Trainer, lr_at, train

__all__ = [
    "MotionSpec",
    "ShapeSpec",
    "SyntheticTripletDataset",
    "Triplet",
    "synth_triplet",
    "latent_matched_sample",
    "perceptual_loss",
    "total_loss",
    "FlowProviderFactory",
    "provide_flows",
    "TrainConfig",
    "Trainer",
    "lr_at",
    "train",
]
