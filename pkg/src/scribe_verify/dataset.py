"""Scribe-labelled image folders, preprocessing, augmentation and corrupted-file fallback.

Layout on disk is ``root/<scribe_name>/<image>.png|.jpg``.  Images are read as
RGB, resized bilinearly to the target size, scaled to [0, 1], optionally
augmented, and normalized per channel with the ImageNet statistics.
"""

from __future__ import annotations

import functools
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
# uniform draws consumed per image when augmenting: hflip, gray-flip, contrast, brightness
AUGMENT_DRAWS = 4
MAX_RESAMPLES = 3


class CorpusError(ValueError):
    """The folder tree cannot serve as a scribe corpus."""


class CorruptedImage(Exception):
    """An image file could not be decoded."""

    def __init__(self, path, reason: str = ""):
        super().__init__(f"cannot read image {path}: {reason}")
        self.path = path


@dataclass
class ScribeCorpus:
    root: Path
    classes: list[tuple[str, list[Path]]]
    split: str = "train"

    @property
    def class_names(self) -> list[str]:
        return [name for name, _ in self.classes]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_images(self) -> int:
        return sum(len(paths) for _, paths in self.classes)

    def counts(self) -> dict[str, int]:
        return {name: len(paths) for name, paths in self.classes}

    def all_paths(self) -> list[Path]:
        return [p for _, paths in self.classes for p in paths]

    def relpath(self, path: Path) -> str:
        return Path(path).relative_to(self.root).as_posix()


@dataclass
class PreprocessConfig:
    target_size: tuple[int, int] = (64, 64)
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    augment: bool = False
    hflip_p: float = 0.5
    grayflip_p: float = 0.2
    contrast_range: tuple[float, float] = (0.9, 1.1)
    brightness_range: tuple[float, float] = (-0.1, 0.1)

    def __post_init__(self):
        self.target_size = (int(self.target_size[0]), int(self.target_size[1]))
        self.mean = tuple(float(v) for v in self.mean)
        self.std = tuple(float(v) for v in self.std)
        self.contrast_range = tuple(float(v) for v in self.contrast_range)
        self.brightness_range = tuple(float(v) for v in self.brightness_range)
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std need three channel values")
        if min(self.std) <= 0:
            raise ValueError("std components must be positive")
        if min(self.target_size) < 1:
            raise ValueError("target_size must be positive")

    def without_augment(self) -> "PreprocessConfig":
        return PreprocessConfig(**{**self.__dict__, "augment": False})


def scan_corpus(root, split: str = "train") -> ScribeCorpus:
    """Enumerate ``root/<scribe>/<image>`` in lexicographic order.

    Train splits need at least two images per scribe so positives exist.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} does not exist")
    classes = []
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if not entry.is_dir():
            logger.warning("ignoring non-directory entry %s in corpus root", entry.name)
            continue
        images = sorted(
            (p for p in entry.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
            key=lambda p: p.name,
        )
        if not images:
            logger.warning("scribe folder %s has no images; skipped", entry.name)
            continue
        if split == "train" and len(images) < 2:
            raise CorpusError(f"scribe {entry.name!r} has {len(images)} image(s); training needs at least 2")
        classes.append((entry.name, images))
    if not classes:
        raise CorpusError(f"corpus root {root} contains no scribe folders with images")
    logger.info("scanned %s split at %s: %d scribes, %d images", split, root, len(classes), sum(len(c[1]) for c in classes))
    return ScribeCorpus(root, classes, split)


@functools.lru_cache(maxsize=8192)
def _decode(path: str, mtime_ns: int, size: int) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    arr.setflags(write=False)
    return arr


def read_rgb(path) -> np.ndarray:
    """Decode an image file to ``uint8 [H, W, 3]``; raises :class:`CorruptedImage`."""
    try:
        st = os.stat(path)
        return _decode(str(path), st.st_mtime_ns, st.st_size)
    except (OSError, UnidentifiedImageError, ValueError, SyntaxError) as exc:
        raise CorruptedImage(path, str(exc)) from exc


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centers (align_corners=False), source coordinates clamped at the borders
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (src - i0).astype(np.float32)
    return i0, i1, frac


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of ``[H, W, C]`` float data to ``size = (H', W')``."""
    h, w = img.shape[:2]
    if (h, w) == tuple(size):
        return img
    r0, r1, fr = _axis_weights(h, size[0])
    c0, c1, fc = _axis_weights(w, size[1])
    rows = img[r0] * (1 - fr)[:, None, None] + img[r1] * fr[:, None, None]
    return rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]


def normalize(img01: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    """``[H, W, 3]`` in [0, 1] -> normalized ``[3, H, W]`` float32."""
    mean = np.asarray(cfg.mean, dtype=np.float32)
    std = np.asarray(cfg.std, dtype=np.float32)
    out = (img01.astype(np.float32) - mean) / std
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def augment(img01: np.ndarray, cfg: PreprocessConfig, rng: np.random.Generator) -> np.ndarray:
    """Random hflip, gray-flip inversion and contrast/brightness jitter.

    Always consumes exactly ``AUGMENT_DRAWS`` uniforms from ``rng``.
    """
    u = rng.random(AUGMENT_DRAWS)
    out = img01
    if u[0] < cfg.hflip_p:
        out = out[:, ::-1]
    if u[1] < cfg.grayflip_p:
        out = 1.0 - out
    lo, hi = cfg.contrast_range
    contrast = lo + (hi - lo) * u[2]
    lo, hi = cfg.brightness_range
    brightness = lo + (hi - lo) * u[3]
    return np.clip(contrast * out + brightness, 0.0, 1.0).astype(np.float32)


def load_and_preprocess(path, cfg: PreprocessConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Read, resize, scale, (augment), normalize: returns float32 ``[3, H, W]``."""
    raw = read_rgb(path)
    img = resize_bilinear(raw.astype(np.float32) / np.float32(255.0), cfg.target_size)
    if cfg.augment:
        if rng is None:
            raise ValueError("augmentation needs an rng")
        img = augment(img, cfg, rng)
    return normalize(img, cfg)


def placeholder(cfg: PreprocessConfig) -> np.ndarray:
    """Blank image (all pixels 0 before normalization)."""
    h, w = cfg.target_size
    return normalize(np.zeros((h, w, 3), dtype=np.float32), cfg)


def load_with_fallback(path, class_paths, cfg: PreprocessConfig, rng: np.random.Generator) -> np.ndarray:
    """Like :func:`load_and_preprocess` but never raises on bad files.

    A corrupted file is replaced by a uniformly resampled image of the same
    class (one ``rng.integers`` draw per retry, at most ``MAX_RESAMPLES``);
    if every attempt fails the blank placeholder is returned.
    """
    if not class_paths:
        raise ValueError("class_paths must be non-empty")
    try:
        return load_and_preprocess(path, cfg, rng)
    except CorruptedImage as exc:
        logger.warning("%s; resampling from the same class", exc)
    for _ in range(MAX_RESAMPLES):
        candidate = class_paths[int(rng.integers(len(class_paths)))]
        try:
            return load_and_preprocess(candidate, cfg, rng)
        except CorruptedImage as exc:
            logger.warning("%s; resampling from the same class", exc)
    logger.warning("repeated load failures for class of %s; substituting blank placeholder", path)
    return placeholder(cfg)
