"""Adam optimization of Siamese (contrastive) and triplet embedding networks."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backbones import ARCHITECTURES, EmbeddingNet, build_backbone
from .checkpoint import Checkpoint, checkpoint_name, load_checkpoint, save_checkpoint
from .dataset import PreprocessConfig, ScribeCorpus, load_with_fallback
from .layers import Parameter
from .losses import contrastive_loss, euclidean_distance, triplet_loss
from .sampler import (
    STREAM_INIT,
    STREAM_TRAIN,
    STREAM_VAL,
    BatchLoader,
    draw_pairs,
    draw_triplets,
    stream,
    stream_seed,
)
from .tensor import Tensor, no_grad, split

logger = logging.getLogger(__name__)

MODES = ("siamese", "triplet")
LOSS_NAMES = {"siamese": "contrastive", "triplet": "triplet"}


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.value = epoch, batch, value


@dataclass
class TrainConfig:
    mode: str = "siamese"
    backbone: str = "cnn-mini"
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 30
    contrastive_margin: float = 0.6
    triplet_margin: float = 1.0
    seed: int = 42
    val_fraction: float = 0.1
    checkpoint_dir: str = "checkpoints"
    input_size: tuple[int, int] = (64, 64)
    workers: int = 0
    class_sampling: str = "uniform"
    val_batches: int = 4
    backbone_config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_size = (int(self.input_size[0]), int(self.input_size[1]))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.backbone not in ARCHITECTURES:
            raise ValueError(f"backbone must be one of {ARCHITECTURES}, got {self.backbone!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in [0, 0.5)")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be a positive even number")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.contrastive_margin < 0 or self.triplet_margin < 0:
            raise ValueError("margins must be nonnegative")

    @property
    def loss_name(self) -> str:
        return LOSS_NAMES[self.mode]


# ----------------------------------------------------------------------- adam
@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: dict[str, Parameter],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    A missing gradient counts as zero.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if weight_decay:
            g = g + weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)


class Adam:
    """Adam over a fixed set of named parameters (one state per parameter)."""

    def __init__(self, named_params, lr: float = 1e-3, weight_decay: float = 0.0, **state_kwargs):
        self.params = dict(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamState(**state_kwargs)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr, self.weight_decay)


# ------------------------------------------------------------------ history
@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float | None


def best_epoch(history: list[EpochStats], max_epoch: int | None = None) -> int:
    """Epoch with the lowest validation loss (train loss if no validation); ties go to the earliest."""
    records = [h for h in history if max_epoch is None or h.epoch <= max_epoch]
    if not records:
        raise ValueError("history is empty")
    use_val = all(h.val_loss is not None for h in records)
    best = records[0]
    for h in records[1:]:
        key = h.val_loss if use_val else h.train_loss
        ref = best.val_loss if use_val else best.train_loss
        if key < ref:
            best = h
    return best.epoch


def select_best(history: list[EpochStats], checkpoint_dir, max_epoch: int | None = None) -> Checkpoint:
    return load_checkpoint(Path(checkpoint_dir) / checkpoint_name(best_epoch(history, max_epoch)))


# -------------------------------------------------------------- data split
def split_validation(corpus: ScribeCorpus, fraction: float, rng: np.random.Generator) -> tuple[ScribeCorpus, ScribeCorpus | None]:
    """Hold out ``round(fraction * n)`` images per scribe.

    At least 2 are held out so validation positives exist, and at least 2
    always remain for training.
    """
    if fraction <= 0:
        return corpus, None
    train, val = [], []
    for name, paths in corpus.classes:
        n_val = min(max(2, round(fraction * len(paths))), len(paths) - 2)
        picked = set(rng.choice(len(paths), size=n_val, replace=False).tolist()) if n_val > 0 else set()
        train.append((name, [p for i, p in enumerate(paths) if i not in picked]))
        if picked:
            val.append((name, [p for i, p in enumerate(paths) if i in picked]))
    val_corpus = ScribeCorpus(corpus.root, val, corpus.split) if len(val) >= 2 else None
    return ScribeCorpus(corpus.root, train, corpus.split), val_corpus


class ValidationSet:
    """Fixed pairs/triplets over held-out images, preloaded without augmentation."""

    def __init__(self, corpus: ScribeCorpus, mode: str, count: int, cfg: PreprocessConfig, rng: np.random.Generator):
        cfg = cfg.without_augment()
        if mode == "siamese":
            if not any(len(p) >= 2 for _, p in corpus.classes):
                raise ValueError("validation split has no scribe with 2 images")
            draws = draw_pairs(corpus, count, rng)
            items = [(d.c1, d.i1) for d in draws] + [(d.c2, d.i2) for d in draws]
            self.labels = np.array([d.y for d in draws])
        else:
            draws = draw_triplets(corpus, count, rng)
            items = [(d.ca, d.ia) for d in draws] + [(d.ca, d.ip) for d in draws] + [(d.cn, d.i_n) for d in draws]
            self.labels = None
        seeds = rng.integers(0, 2**63 - 1, size=len(items))
        self.images = np.stack(
            [
                load_with_fallback(corpus.classes[c][1][i], corpus.classes[c][1], cfg, np.random.default_rng(int(s)))
                for (c, i), s in zip(items, seeds)
            ]
        )
        self.mode = mode
        self.count = count


def _pair_loss(model: EmbeddingNet, images: np.ndarray, labels, margin: float) -> Tensor:
    f1, f2 = split(model(Tensor(images)), 2)
    return contrastive_loss(euclidean_distance(f1, f2), labels, margin)


def _triplet_loss(model: EmbeddingNet, images: np.ndarray, margin: float) -> Tensor:
    fa, fp, fn = split(model(Tensor(images)), 3)
    return triplet_loss(euclidean_distance(fa, fp), euclidean_distance(fa, fn), margin)


def validation_loss(model: EmbeddingNet, val: ValidationSet, cfg: TrainConfig) -> float:
    model.eval()
    losses = []
    per = 2 if val.mode == "siamese" else 3
    with no_grad():
        for start in range(0, val.count, cfg.batch_size):
            stop = min(start + cfg.batch_size, val.count)
            idx = np.concatenate([np.arange(start, stop) + k * val.count for k in range(per)])
            if val.mode == "siamese":
                loss = _pair_loss(model, val.images[idx], val.labels[start:stop], cfg.contrastive_margin)
            else:
                loss = _triplet_loss(model, val.images[idx], cfg.triplet_margin)
            losses.append(loss.item() * (stop - start))
    return float(sum(losses) / val.count)


def _config_record(cfg: TrainConfig) -> dict:
    record = asdict(cfg)
    # where a run writes and how many loader threads it uses do not change its weights
    for key in ("checkpoint_dir", "workers"):
        record.pop(key, None)
    record["input_size"] = list(cfg.input_size)
    return record


def train(
    cfg: TrainConfig,
    corpus: ScribeCorpus,
    preprocess: PreprocessConfig | None = None,
) -> tuple[Checkpoint, list[EpochStats]]:
    """Train for ``cfg.epochs`` epochs, writing ``model_e{epoch}.ckpt`` after each.

    An epoch is ``floor(n_images / batch_size)`` batches of freshly sampled
    pairs (or triplets), where ``n_images`` counts the whole training split.
    """
    preprocess = preprocess or PreprocessConfig(target_size=cfg.input_size, augment=True)
    if preprocess.target_size != cfg.input_size:
        raise ValueError(f"preprocess size {preprocess.target_size} != model input size {cfg.input_size}")
    steps = corpus.num_images // cfg.batch_size
    if steps < 1:
        raise ValueError(f"corpus of {corpus.num_images} images is smaller than one batch of {cfg.batch_size}")

    model = build_backbone(cfg.backbone, cfg.backbone_config, cfg.input_size, seed=stream_seed(cfg.seed, STREAM_INIT))
    train_corpus, val_corpus = split_validation(corpus, cfg.val_fraction, stream(cfg.seed, STREAM_VAL, 0))
    val = None
    if val_corpus is not None:
        try:
            val = ValidationSet(val_corpus, cfg.mode, cfg.val_batches * cfg.batch_size, preprocess, stream(cfg.seed, STREAM_VAL, 1))
        except ValueError as exc:
            logger.warning("validation disabled: %s", exc)
    optimizer = Adam(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = stream(cfg.seed, STREAM_TRAIN)
    out_dir = Path(cfg.checkpoint_dir)
    history: list[EpochStats] = []
    ckpt = None

    with BatchLoader(train_corpus, preprocess, cfg.workers) as loader:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            total = 0.0
            for b in range(steps):
                if cfg.mode == "siamese":
                    draws = draw_pairs(train_corpus, cfg.batch_size, rng, cfg.class_sampling)
                    items = [(d.c1, d.i1) for d in draws] + [(d.c2, d.i2) for d in draws]
                    images = np.stack(loader.load(items, rng))
                    loss = _pair_loss(model, images, np.array([d.y for d in draws]), cfg.contrastive_margin)
                else:
                    draws = draw_triplets(train_corpus, cfg.batch_size, rng, cfg.class_sampling)
                    items = [(d.ca, d.ia) for d in draws] + [(d.ca, d.ip) for d in draws] + [(d.cn, d.i_n) for d in draws]
                    images = np.stack(loader.load(items, rng))
                    loss = _triplet_loss(model, images, cfg.triplet_margin)
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteLossError(epoch, b + 1, value)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += value
            stats = EpochStats(epoch, total / steps, validation_loss(model, val, cfg) if val is not None else None)
            history.append(stats)
            logger.info(
                "epoch %d/%d %s loss %.5f val %s",
                epoch,
                cfg.epochs,
                cfg.loss_name,
                stats.train_loss,
                "n/a" if stats.val_loss is None else f"{stats.val_loss:.5f}",
            )
            ckpt = Checkpoint.from_model(
                model,
                epoch=epoch,
                seed=cfg.seed,
                loss=cfg.loss_name,
                history=[asdict(h) for h in history],
                train_config=_config_record(cfg),
            )
            save_checkpoint(ckpt, out_dir / checkpoint_name(epoch))
    return ckpt, history
