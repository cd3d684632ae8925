"""Procedural "scribes": each draws strokes with its own slant, width, wobble and ink.

Stands in for non-public manuscript collections so the whole pipeline can be
exercised on a desk.  Output follows the folder convention of
:mod:`scribe_verify.dataset`::

    out/train/scribe_00/img_0000.png
    out/test/scribe_00/img_0000.png
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .dataset import ScribeCorpus, scan_corpus

SUPERSAMPLE = 2


@dataclass(frozen=True)
class ScribeStyle:
    slant: float  # radians, shear applied about the canvas centre
    stroke_width: float  # px at a 64 px canvas; scaled with canvas size
    jitter: float  # std of point displacement, in units of stroke length
    ink_density: float  # darkness of fully inked pixels, (0, 1]
    stroke_min: int
    stroke_max: int

    def __post_init__(self):
        if self.stroke_width < 1:
            raise ValueError("stroke_width must be >= 1")
        if not 0 < self.ink_density <= 1:
            raise ValueError("ink_density must lie in (0, 1]")
        if not 1 <= self.stroke_min <= self.stroke_max:
            raise ValueError("invalid stroke count range")


@dataclass
class SyntheticCorpus:
    root: Path
    train: ScribeCorpus
    test: ScribeCorpus
    styles: dict[str, ScribeStyle]


_RANGES = (
    (0.0, 1.1),  # slant magnitude only: a horizontal flip mirrors the sign
    (1.5, 12.0),  # stroke width
    (0.0, 0.4),  # jitter
    (0.2, 1.0),  # ink density
    (3.0, 8.0),  # stroke count, floored
)
_CANDIDATES = 200


def _latin_hypercube(n: int, dims: int, rng: np.random.Generator) -> np.ndarray:
    # per column: one draw in each of n equal-width bins, bins in random order
    return (np.argsort(rng.random((dims, n)), axis=1).T + rng.random((n, dims))) / n


def _maximin_design(n: int, dims: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube whose closest pair of rows is farthest apart among a few hundred draws."""
    best, best_gap = None, -1.0
    for _ in range(_CANDIDATES):
        u = _latin_hypercube(n, dims, rng)
        d = np.sqrt(((u[:, None, :] - u[None, :, :]) ** 2).sum(-1))
        gap = d[np.triu_indices(n, 1)].min() if n > 1 else 0.0
        if gap > best_gap:
            best, best_gap = u, gap
    return best


def draw_styles(n_scribes: int, rng: np.random.Generator) -> list[ScribeStyle]:
    """Maximin Latin-hypercube styles: every attribute is spread over its range
    and no two scribes sit in neighbouring bins of all attributes at once.

    Each scribe writes a fixed number of strokes per image.
    """
    u = _maximin_design(n_scribes, len(_RANGES), rng)
    lo = np.array([r[0] for r in _RANGES])
    hi = np.array([r[1] for r in _RANGES])
    v = lo + (hi - lo) * u
    styles = []
    for slant, width, jitter, density, low in v:
        count = int(np.floor(low))
        styles.append(
            ScribeStyle(
                slant=float(slant),
                stroke_width=float(width),
                jitter=float(jitter),
                ink_density=float(density),
                stroke_min=count,
                stroke_max=count,
            )
        )
    return styles


def _stroke_points(size: float, style: ScribeStyle, rng: np.random.Generator) -> np.ndarray:
    # a downstroke centred well inside the canvas; the slant shear then sets its lean
    angle = math.pi / 2 + rng.normal(0.0, 0.08)
    length = rng.uniform(0.35, 0.45) * size
    centre = rng.uniform(0.3, 0.7, size=2) * size
    half = 0.5 * length * np.array([math.cos(angle), math.sin(angle)])
    start, end = centre - half, centre + half
    t = np.linspace(0.0, 1.0, 10)[:, None]
    if rng.random() < 0.5:
        pts = (1 - t) * start + t * end
    else:
        normal = np.array([-math.sin(angle), math.cos(angle)])
        ctrl = 0.5 * (start + end) + normal * rng.normal(0.0, 0.3) * length
        pts = (1 - t) ** 2 * start + 2 * (1 - t) * t * ctrl + t**2 * end
    pts[1:-1] += rng.normal(0.0, style.jitter * length * 0.25, size=(len(pts) - 2, 2))
    pts[:, 0] += math.tan(style.slant) * (size / 2 - pts[:, 1])
    return pts


def render_sample(style: ScribeStyle, canvas: int, rng: np.random.Generator) -> np.ndarray:
    """One grayscale ``uint8 [canvas, canvas]`` image: dark ink on light paper."""
    size = canvas * SUPERSAMPLE
    img = Image.new("L", (size, size), 255)
    draw = ImageDraw.Draw(img)
    ink = int(round(255 * (1.0 - style.ink_density)))
    width = max(1, int(round(style.stroke_width * SUPERSAMPLE * canvas / 64)))
    for _ in range(int(rng.integers(style.stroke_min, style.stroke_max + 1))):
        pts = _stroke_points(size, style, rng)
        draw.line([tuple(p) for p in pts.tolist()], fill=ink, width=width, joint="curve")
        r = width / 2
        for x, y in (pts[0], pts[-1]):
            draw.ellipse((x - r, y - r, x + r, y + r), fill=ink)
    small = np.asarray(img.reduce(SUPERSAMPLE), dtype=np.float64)
    paper = rng.normal(0.0, 3.0, size=small.shape)
    return np.clip(np.round(small + paper), 0, 255).astype(np.uint8)


def ink_coverage(img: np.ndarray, threshold: float = 0.1) -> float:
    """Mean ink darkness over inked pixels (darkness ``1 - v/255`` above ``threshold``)."""
    dark = 1.0 - np.asarray(img, dtype=np.float64) / 255.0
    inked = dark > threshold
    return float(dark[inked].mean()) if inked.any() else 0.0


def generate_synthetic_corpus(
    out,
    n_scribes: int = 8,
    n_train: int = 200,
    n_test: int = 50,
    canvas: int = 64,
    seed: int = 42,
) -> SyntheticCorpus:
    """Render ``n_scribes`` styles into ``out/train`` and ``out/test``.

    The same arguments always produce byte-identical files.
    """
    if n_scribes < 2:
        raise ValueError("need at least 2 scribes")
    if canvas < 32:
        raise ValueError("canvas must be at least 32 px")
    if n_train < 2 or n_test < 0:
        raise ValueError("need n_train >= 2 and n_test >= 0")
    out = Path(out)
    seq = np.random.SeedSequence(seed)
    style_seq, *scribe_seqs = seq.spawn(n_scribes + 1)
    styles = draw_styles(n_scribes, np.random.default_rng(style_seq))
    named = {}
    width = max(2, len(str(n_scribes - 1)))
    for k, (style, sseq) in enumerate(zip(styles, scribe_seqs)):
        name = f"scribe_{k:0{width}d}"
        named[name] = style
        rng = np.random.default_rng(sseq)
        for split, count in (("train", n_train), ("test", n_test)):
            folder = out / split / name
            folder.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                Image.fromarray(render_sample(style, canvas, rng)).save(folder / f"img_{i:04d}.png")
    (out / "styles.json").write_text(
        json.dumps({name: asdict(s) for name, s in named.items()}, indent=2, sort_keys=True) + "\n"
    )
    test = scan_corpus(out / "test", "test") if n_test else ScribeCorpus(out / "test", [], "test")
    return SyntheticCorpus(out, scan_corpus(out / "train", "train"), test, named)


def load_styles(root) -> dict[str, ScribeStyle]:
    data = json.loads((Path(root) / "styles.json").read_text())
    return {name: ScribeStyle(**fields) for name, fields in data.items()}
