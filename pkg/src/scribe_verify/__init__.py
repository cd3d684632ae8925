"""Scribe verification with metric learning on a small numpy autodiff engine."""

from .backbones import ARCHITECTURES, build_backbone
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluation import EvalReport, build_report, score_pairs
from .losses import contrastive_loss, euclidean_distance, triplet_loss
from .tensor import Tensor, no_grad
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES",
    "Checkpoint",
    "EvalReport",
    "Tensor",
    "TrainConfig",
    "build_backbone",
    "build_report",
    "contrastive_loss",
    "euclidean_distance",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
    "score_pairs",
    "train",
    "triplet_loss",
]
