"""On-the-fly pair/triplet sampling and the fixed evaluation-pair protocol."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import PreprocessConfig, ScribeCorpus, load_with_fallback

PAIRS_HEADER = ("path1", "path2", "label")

# independent random streams derived from one run seed
STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_VAL = 3
STREAM_TEST_PAIRS = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def stream_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1)[0])


class SamplingError(ValueError):
    """The corpus cannot supply the requested samples."""


@dataclass
class PairSample:
    x1: np.ndarray
    x2: np.ndarray
    y: int  # 1 = same scribe


@dataclass
class TripletSample:
    x_a: np.ndarray
    x_p: np.ndarray
    x_n: np.ndarray


@dataclass(frozen=True)
class PairDraw:
    """Index-level pair: (class, image) for each side, plus the label."""

    c1: int
    i1: int
    c2: int
    i2: int
    y: int


@dataclass(frozen=True)
class TripletDraw:
    ca: int
    ia: int
    ip: int
    cn: int
    i_n: int


def _class_probs(corpus: ScribeCorpus, eligible: Sequence[int], mode: str) -> np.ndarray:
    if mode == "uniform":
        w = np.ones(len(eligible))
    elif mode == "proportional":
        w = np.array([len(corpus.classes[c][1]) for c in eligible], dtype=np.float64)
    else:
        raise ValueError(f"unknown class sampling mode {mode!r}")
    return w / w.sum()


def draw_pairs(corpus: ScribeCorpus, batch_size: int, rng: np.random.Generator, class_sampling: str = "uniform") -> list[PairDraw]:
    """``batch_size / 2`` positives followed by ``batch_size / 2`` negatives."""
    if batch_size % 2:
        raise SamplingError(f"batch_size must be even for 1:1 pair balance, got {batch_size}")
    if corpus.num_classes < 2:
        raise SamplingError("negative pairs need at least 2 scribes")
    sizes = [len(paths) for _, paths in corpus.classes]
    multi = [c for c, n in enumerate(sizes) if n >= 2]
    if not multi:
        raise SamplingError("positive pairs need a scribe with at least 2 images")
    pos_p = _class_probs(corpus, multi, class_sampling)
    all_p = _class_probs(corpus, range(len(sizes)), class_sampling)
    half = batch_size // 2
    draws = []
    for _ in range(half):
        c = multi[int(rng.choice(len(multi), p=pos_p))]
        i1, i2 = rng.choice(sizes[c], size=2, replace=False)
        draws.append(PairDraw(c, int(i1), c, int(i2), 1))
    for _ in range(half):
        c1, c2 = rng.choice(len(sizes), size=2, replace=False, p=all_p)
        draws.append(PairDraw(int(c1), int(rng.integers(sizes[c1])), int(c2), int(rng.integers(sizes[c2])), 0))
    return draws


def draw_triplets(corpus: ScribeCorpus, batch_size: int, rng: np.random.Generator, class_sampling: str = "uniform") -> list[TripletDraw]:
    """Anchor class uniform (resampled if it has a single image), distinct positive, other-class negative."""
    sizes = [len(paths) for _, paths in corpus.classes]
    if len(sizes) < 2:
        raise SamplingError("triplets need at least 2 scribes")
    if max(sizes) < 2:
        raise SamplingError("triplets need a scribe with at least 2 images")
    probs = _class_probs(corpus, range(len(sizes)), class_sampling)
    draws = []
    for _ in range(batch_size):
        ca = int(rng.choice(len(sizes), p=probs))
        while sizes[ca] < 2:
            ca = int(rng.choice(len(sizes), p=probs))
        ia, ip = rng.choice(sizes[ca], size=2, replace=False)
        others = [c for c in range(len(sizes)) if c != ca]
        op = probs[others] / probs[others].sum()
        cn = others[int(rng.choice(len(others), p=op))]
        draws.append(TripletDraw(ca, int(ia), int(ip), cn, int(rng.integers(sizes[cn]))))
    return draws


class BatchLoader:
    """Loads the images of a drawn batch, optionally with a thread pool.

    Each image gets its own generator seeded from a per-item seed drawn up
    front, so serial and parallel loading yield identical arrays.
    """

    def __init__(self, corpus: ScribeCorpus, cfg: PreprocessConfig, workers: int = 0):
        self.corpus = corpus
        self.cfg = cfg
        self.workers = workers
        self._pool = ThreadPoolExecutor(workers) if workers > 0 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def load(self, items: list[tuple[int, int]], rng: np.random.Generator) -> list[np.ndarray]:
        seeds = rng.integers(0, 2**63 - 1, size=len(items))

        def one(k):
            c, i = items[k]
            paths = self.corpus.classes[c][1]
            return load_with_fallback(paths[i], paths, self.cfg, np.random.default_rng(int(seeds[k])))

        if self._pool is None:
            return [one(k) for k in range(len(items))]
        return list(self._pool.map(one, range(len(items))))


def sample_pair_batch(
    corpus: ScribeCorpus,
    batch_size: int,
    rng: np.random.Generator,
    cfg: PreprocessConfig | None = None,
    loader: BatchLoader | None = None,
    class_sampling: str = "uniform",
) -> list[PairSample]:
    """Balanced pair batch with images loaded (augmented per ``cfg``)."""
    draws = draw_pairs(corpus, batch_size, rng, class_sampling)
    loader = loader or BatchLoader(corpus, cfg or PreprocessConfig(augment=True))
    items = [(d.c1, d.i1) for d in draws] + [(d.c2, d.i2) for d in draws]
    images = loader.load(items, rng)
    n = len(draws)
    return [PairSample(images[k], images[n + k], d.y) for k, d in enumerate(draws)]


def sample_triplet_batch(
    corpus: ScribeCorpus,
    batch_size: int,
    rng: np.random.Generator,
    cfg: PreprocessConfig | None = None,
    loader: BatchLoader | None = None,
    class_sampling: str = "uniform",
) -> list[TripletSample]:
    draws = draw_triplets(corpus, batch_size, rng, class_sampling)
    loader = loader or BatchLoader(corpus, cfg or PreprocessConfig(augment=True))
    items = [(d.ca, d.ia) for d in draws] + [(d.ca, d.ip) for d in draws] + [(d.cn, d.i_n) for d in draws]
    images = loader.load(items, rng)
    n = len(draws)
    return [TripletSample(images[k], images[n + k], images[2 * n + k]) for k in range(n)]


# ---------------------------------------------------------------- test pairs
@dataclass
class PairProtocolFile:
    rows: list[tuple[str, str, int]]

    @property
    def n_pos(self) -> int:
        return sum(1 for r in self.rows if r[2] == 1)

    @property
    def n_neg(self) -> int:
        return sum(1 for r in self.rows if r[2] == 0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PAIRS_HEADER)
        writer.writerows(self.rows)
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_csv().encode("utf-8"))


class PairFileError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_pairs(path) -> PairProtocolFile:
    """Parse a ``path1,path2,label`` CSV; malformed rows raise :class:`PairFileError`."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PAIRS_HEADER:
            raise PairFileError(1, f"expected header {','.join(PAIRS_HEADER)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise PairFileError(line, f"expected 3 columns, got {len(row)}")
            label = row[2].strip()
            if label not in ("0", "1"):
                raise PairFileError(line, f"label must be 0 or 1, got {label!r}")
            rows.append((row[0], row[1], int(label)))
    return PairProtocolFile(rows)


def _sample_unique(candidates_total: int, k: int, draw, enumerate_all, rng) -> list[tuple[int, int, int, int]]:
    if k > candidates_total:
        raise SamplingError(f"requested {k} unique pairs but only {candidates_total} exist")
    if 2 * k > candidates_total:
        pool = enumerate_all()
        idx = rng.choice(len(pool), size=k, replace=False)
        return [pool[i] for i in sorted(idx)]
    seen: set[frozenset] = set()
    out = []
    while len(out) < k:
        c1, i1, c2, i2 = draw()
        key = frozenset(((c1, i1), (c2, i2)))
        if key in seen:
            continue
        seen.add(key)
        out.append((c1, i1, c2, i2))
    return out


def make_test_pairs(corpus: ScribeCorpus, n_pairs: int = 2000, seed: int = 42) -> PairProtocolFile:
    """Balanced, unordered-unique evaluation pairs with root-relative paths.

    Draws come from a stream of the seed reserved for test pairs, so they
    never share randomness with training.
    """
    if n_pairs < 2 or n_pairs % 2:
        raise SamplingError(f"n_pairs must be a positive even number, got {n_pairs}")
    if corpus.num_classes < 2:
        raise SamplingError("negative pairs need at least 2 scribes")
    rng = stream(seed, STREAM_TEST_PAIRS)
    sizes = [len(p) for _, p in corpus.classes]
    half = n_pairs // 2
    multi = [c for c, n in enumerate(sizes) if n >= 2]
    n_pos_total = sum(n * (n - 1) // 2 for n in sizes)
    n_neg_total = (sum(sizes) ** 2 - sum(n * n for n in sizes)) // 2

    def draw_pos():
        c = multi[int(rng.integers(len(multi)))]
        i1, i2 = rng.choice(sizes[c], size=2, replace=False)
        return c, int(i1), c, int(i2)

    def all_pos():
        return [(c, i, c, j) for c in multi for i in range(sizes[c]) for j in range(i + 1, sizes[c])]

    def draw_neg():
        c1, c2 = rng.choice(len(sizes), size=2, replace=False)
        return int(c1), int(rng.integers(sizes[c1])), int(c2), int(rng.integers(sizes[c2]))

    def all_neg():
        return [
            (c1, i, c2, j)
            for c1 in range(len(sizes))
            for c2 in range(c1 + 1, len(sizes))
            for i in range(sizes[c1])
            for j in range(sizes[c2])
        ]

    if not multi:
        raise SamplingError("positive pairs need a scribe with at least 2 images")
    pos = _sample_unique(n_pos_total, half, draw_pos, all_pos, rng)
    neg = _sample_unique(n_neg_total, half, draw_neg, all_neg, rng)
    rows = [(c1, i1, c2, i2, 1) for c1, i1, c2, i2 in pos] + [(c1, i1, c2, i2, 0) for c1, i1, c2, i2 in neg]
    order = rng.permutation(len(rows))

    def rel(c, i):
        return corpus.relpath(corpus.classes[c][1][i])

    return PairProtocolFile([(rel(r[0], r[1]), rel(r[2], r[3]), r[4]) for r in (rows[k] for k in order)])
