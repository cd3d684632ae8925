"""Verification metrics over scored test pairs: threshold scan, FAR/FRR, ROC and AUC.

Convention: label 1 is a same-scribe pair, and a pair is accepted as
same-scribe when its embedding distance is strictly below the threshold.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .dataset import IMAGE_SUFFIXES, PreprocessConfig, load_with_fallback
from .sampler import PairProtocolFile, read_pairs
from .tensor import Tensor, no_grad

SAME, DIFFERENT = "same", "different"


class MetricError(ValueError):
    """Metrics need at least one positive and one negative pair."""


@dataclass
class ScoredPair:
    path1: str
    path2: str
    label: int
    distance: float


@dataclass
class EvalReport:
    threshold: float
    auc: float
    acc: float
    far: float
    frr: float
    roc: list[tuple[float, float]]
    n_pos: int
    n_neg: int
    far_frr_at: str = "threshold"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roc"] = [list(p) for p in self.roc]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["roc"] = [tuple(p) for p in d["roc"]]
        return cls(**d)

    def summary(self) -> dict:
        return {"auc": self.auc, "acc": self.acc, "far": self.far, "frr": self.frr, "threshold": self.threshold}


def _arrays(scored) -> tuple[np.ndarray, np.ndarray]:
    d = np.array([s.distance for s in scored], dtype=np.float64)
    y = np.array([s.label for s in scored], dtype=np.int64)
    return d, y


def _check_classes(y: np.ndarray) -> tuple[int, int]:
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"need both classes, got {n_pos} positive and {n_neg} negative pairs")
    return n_pos, n_neg


def decide(distance: float, tau: float) -> str:
    return SAME if distance < tau else DIFFERENT


def accuracy_percent(correct: int, total: int) -> float:
    return 100.0 * correct / total


def compute_metrics(scored, tau: float) -> tuple[float, float, float]:
    """(ACC, FAR, FRR) in percent at threshold ``tau``."""
    d, y = _arrays(scored)
    n_pos, n_neg = _check_classes(y)
    accept = d < tau
    false_accepts = int((accept & (y == 0)).sum())
    false_rejects = int((~accept & (y == 1)).sum())
    correct = len(y) - false_accepts - false_rejects
    return accuracy_percent(correct, len(y)), 100.0 * false_accepts / n_neg, 100.0 * false_rejects / n_pos


def threshold_candidates(distances: np.ndarray) -> np.ndarray:
    """0, midpoints of consecutive distinct distances, and a point past the maximum."""
    u = np.unique(distances)
    delta = max(1.0, abs(u[-1])) * 1e-6
    return np.concatenate([[0.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + delta]])


def scan_threshold(scored) -> tuple[float, float]:
    """Accuracy-maximizing threshold over the candidate set (ties -> smallest)."""
    d, y = _arrays(scored)
    _check_classes(y)
    cands = threshold_candidates(d)
    order = np.argsort(d, kind="stable")
    ds, ys = d[order], y[order]
    # number of pairs with distance < tau for each candidate
    below = np.searchsorted(ds, cands, side="left")
    pos_below = np.concatenate([[0], np.cumsum(ys == 1)])[below]
    neg_below = below - pos_below
    n_neg = int((y == 0).sum())
    correct = pos_below + (n_neg - neg_below)
    best = int(np.argmax(correct))  # first maximum = smallest tau
    return float(cands[best]), accuracy_percent(int(correct[best]), len(y))


def compute_roc_auc(scored) -> tuple[list[tuple[float, float]], float]:
    """ROC with same-scribe as positive and score ``-D``; AUC by trapezoids.

    One point per distinct distance, so tied scores form diagonal segments
    and the area counts ties as one half.
    """
    d, y = _arrays(scored)
    n_pos, n_neg = _check_classes(y)
    order = np.argsort(d, kind="stable")
    ds, ys = d[order], y[order]
    last_of_run = np.r_[ds[1:] != ds[:-1], True]
    tp = np.cumsum(ys == 1)[last_of_run]
    fp = np.cumsum(ys == 0)[last_of_run]
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return [(float(a), float(b)) for a, b in zip(fpr, tpr)], auc


def trapezoid_auc(roc: list[tuple[float, float]]) -> float:
    fpr = np.array([p[0] for p in roc])
    tpr = np.array([p[1] for p in roc])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def build_report(scored) -> EvalReport:
    tau, _ = scan_threshold(scored)
    acc, far, frr = compute_metrics(scored, tau)
    roc, auc = compute_roc_auc(scored)
    _, y = _arrays(scored)
    return EvalReport(tau, auc, acc, far, frr, roc, int((y == 1).sum()), int((y == 0).sum()))


# ------------------------------------------------------------------ scoring
def embed_paths(model, paths: list[Path], class_paths: dict, cfg: PreprocessConfig, batch_size: int = 64, seed: int = 0) -> np.ndarray:
    """Embeddings for ``paths`` in order (eval mode, no augmentation)."""
    cfg = cfg.without_augment()
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(paths), batch_size):
            chunk = paths[start : start + batch_size]
            batch = np.stack(
                [
                    load_with_fallback(p, class_paths.get(Path(p).parent, [p]), cfg, np.random.default_rng([seed, start + k]))
                    for k, p in enumerate(chunk)
                ]
            )
            out.append(model(Tensor(batch)).data)
    return np.concatenate(out) if out else np.zeros((0, model.embedding_dim), dtype=np.float32)


def score_pairs(
    checkpoint: Checkpoint,
    pairs: PairProtocolFile | str | Path,
    root,
    preprocess: PreprocessConfig | None = None,
    batch_size: int = 64,
) -> list[ScoredPair]:
    """Distance for every row of the pair file, order preserved.

    Paths are resolved against ``root``; unreadable images fall back to a
    resampled image of the same folder, or the blank placeholder.
    """
    if not isinstance(pairs, PairProtocolFile):
        pairs = read_pairs(pairs)
    root = Path(root)
    model = checkpoint.build_model()
    preprocess = preprocess or PreprocessConfig(target_size=model.input_size)
    unique = sorted({p for row in pairs.rows for p in row[:2]})
    resolved = [root / p for p in unique]
    folders: dict[Path, list[Path]] = {}
    for parent in {p.parent for p in resolved}:
        folders[parent] = (
            sorted(q for q in parent.iterdir() if q.is_file() and q.suffix.lower() in IMAGE_SUFFIXES)
            if parent.is_dir()
            else []
        )
    class_paths = {k: v for k, v in folders.items() if v}
    emb = embed_paths(model, resolved, class_paths, preprocess, batch_size)
    index = {p: k for k, p in enumerate(unique)}
    out = []
    for p1, p2, label in pairs.rows:
        diff = emb[index[p1]].astype(np.float64) - emb[index[p2]].astype(np.float64)
        out.append(ScoredPair(p1, p2, label, float(np.sqrt(np.dot(diff, diff)))))
    return out


# ------------------------------------------------------------------ outputs
def _svg(report: EvalReport, size: int = 360, pad: int = 40) -> str:
    span = size - 2 * pad

    def xy(fpr, tpr):
        return f"{pad + fpr * span:.3f},{size - pad - tpr * span:.3f}"

    curve = " ".join(xy(f, t) for f, t in report.roc)
    ticks = []
    for v in (0.0, 0.5, 1.0):
        ticks.append(f'<text x="{pad + v * span:.1f}" y="{size - pad + 16}" font-size="11" text-anchor="middle">{v:g}</text>')
        ticks.append(f'<text x="{pad - 6}" y="{size - pad - v * span + 4:.1f}" font-size="11" text-anchor="end">{v:g}</text>')
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
            f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
            f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
            f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="gray" stroke-dasharray="4,4"/>',
            f'<polyline points="{curve}" fill="none" stroke="#1f77b4" stroke-width="2"/>',
            *ticks,
            f'<text x="{size / 2}" y="{size - 8}" font-size="12" text-anchor="middle">False acceptance rate</text>',
            f'<text x="12" y="{size / 2}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {size / 2})">True acceptance rate</text>',
            f'<text x="{size / 2}" y="{pad - 12}" font-size="13" text-anchor="middle">ROC (AUC = {report.auc:.4f})</text>',
            "</svg>",
            "",
        ]
    )


def emit_report(report: EvalReport, out_dir) -> dict[str, Path]:
    """Write ``report.json``, ``roc.csv`` (fpr,tpr) and ``roc.svg``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"report": out_dir / "report.json", "roc_csv": out_dir / "roc.csv", "roc_svg": out_dir / "roc.svg"}
    paths["report"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(paths["roc_csv"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("fpr", "tpr"))
        writer.writerows((repr(f), repr(t)) for f, t in report.roc)
    paths["roc_svg"].write_text(_svg(report), encoding="utf-8")
    return paths


def read_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def read_roc_csv(path) -> list[tuple[float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(float(a), float(b)) for a, b in reader]
