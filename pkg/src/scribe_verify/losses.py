"""Euclidean embedding distance and the contrastive / triplet objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor, sqrt

# keeps d/dD sqrt finite at D = 0; biases D by at most 1e-6
DIST_EPS = 1e-12


@dataclass
class LossConfig:
    contrastive_margin: float = 0.6
    triplet_margin: float = 1.0

    def __post_init__(self):
        if self.contrastive_margin < 0 or self.triplet_margin < 0:
            raise ValueError("margins must be nonnegative")


def euclidean_distance(f1: Tensor, f2: Tensor) -> Tensor:
    """Row-wise ``||f1 - f2||_2`` for ``[N, d]`` inputs, returning ``[N]``."""
    if f1.shape != f2.shape or f1.ndim != 2:
        raise ShapeError(f"euclidean_distance needs matching [N, d] inputs, got {f1.shape} and {f2.shape}")
    diff = f1 - f2
    return sqrt((diff * diff).sum(axis=1) + DIST_EPS)


def _labels(y, n: int, dtype) -> np.ndarray:
    y = np.asarray(y.data if isinstance(y, Tensor) else y)
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} does not match distances [{n}]")
    if not np.isin(y, (0, 1)).all():
        raise ValueError(f"labels must be 0 or 1, got {np.unique(y).tolist()}")
    return y.astype(dtype)


def contrastive_loss(distance: Tensor, y, margin: float = 0.6) -> Tensor:
    """Mean over pairs of ``y D^2 / 2 + (1 - y) max(0, margin - D)^2 / 2``.

    ``y = 1`` marks a same-scribe pair.
    """
    if distance.ndim != 1:
        raise ShapeError(f"expected distances of shape [N], got {distance.shape}")
    yy = _labels(y, distance.shape[0], distance.dtype)
    pos = Tensor(0.5 * yy) * distance * distance
    hinge = F.relu(margin - distance)
    neg = Tensor(0.5 * (1.0 - yy)) * hinge * hinge
    return (pos + neg).mean()


def triplet_loss(d_ap: Tensor, d_an: Tensor, margin: float = 1.0) -> Tensor:
    """Mean over triplets of ``max(0, D(a, p) - D(a, n) + margin)``."""
    if d_ap.shape != d_an.shape or d_ap.ndim != 1:
        raise ShapeError(f"triplet_loss needs matching [N] distances, got {d_ap.shape} and {d_an.shape}")
    return F.relu(d_ap - d_an + margin).mean()
