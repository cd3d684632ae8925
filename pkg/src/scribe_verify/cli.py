"""Command-line entry point: ``scribe-verify {gen-synth,make-pairs,train,evaluate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import asdict
from pathlib import Path

from .backbones import ARCHITECTURES
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, resolve, write_resolved
from .dataset import CorpusError, PreprocessConfig, scan_corpus
from .evaluation import MetricError, build_report, emit_report, score_pairs
from .sampler import PairFileError, SamplingError, make_test_pairs, read_pairs
from .synthetic import generate_synthetic_corpus
from .trainer import EpochStats, NonFiniteLossError, TrainConfig, best_epoch, select_best, train

logger = logging.getLogger("scribe_verify")

PAIRS_NAME = "test_pairs.csv"
_CKPT_RE = re.compile(r"model_e(\d+)\.ckpt$")


class UsageError(Exception):
    pass


def _split_dir(root, split: str) -> Path:
    """``root/split`` for a gen-synth style tree, else ``root`` itself."""
    root = Path(root)
    return root / split if (root / split).is_dir() else root


def _require(cfg: dict, value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required (flag or config file)")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _even(text: str) -> int:
    value = _positive(text)
    if value % 2:
        raise argparse.ArgumentTypeError(f"expected an even number, got {text}")
    return value


def _preprocess(cfg: dict, augment: bool) -> PreprocessConfig:
    p = cfg["preprocess"]
    return PreprocessConfig(
        target_size=tuple(p["target_size"]),
        augment=augment and p["augment"],
        hflip_p=p["hflip_p"],
        grayflip_p=p["grayflip_p"],
        contrast_range=tuple(p["contrast_range"]),
        brightness_range=tuple(p["brightness_range"]),
    )


# ------------------------------------------------------------------ commands
def cmd_gen_synth(cfg: dict) -> int:
    out = Path(_require(cfg, cfg["out"], "--out"))
    s = cfg["synth"]
    corpus = generate_synthetic_corpus(out, s["scribes"], s["train"], s["test"], s["canvas"], cfg["seed"])
    write_resolved(cfg, out, "gen-synth")
    for split in (corpus.train, corpus.test):
        for name, paths in split.classes:
            print(f"{split.split}\t{name}\t{len(paths)}")
    return 0


def cmd_make_pairs(cfg: dict, force: bool) -> int:
    root = _require(cfg, cfg["data"]["root"], "--root")
    out_dir = Path(cfg["out"] or ".")
    target = Path(cfg["data"]["pairs"]) if cfg["data"]["pairs"] else out_dir / PAIRS_NAME
    if target.exists() and not force:
        print(f"error: {target} exists; pass --force to overwrite", file=sys.stderr)
        return 1
    corpus = scan_corpus(_split_dir(root, "test"), "test")
    pairs = make_test_pairs(corpus, cfg["pairs"]["n"], cfg["seed"])
    target.parent.mkdir(parents=True, exist_ok=True)
    pairs.write(target)
    write_resolved(cfg, target.parent, "make-pairs")
    print(f"wrote {len(pairs.rows)} pairs ({pairs.n_pos} same, {pairs.n_neg} different) to {target}", file=sys.stderr)
    return 0


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    try:
        return TrainConfig(
            mode=t["mode"],
            backbone=t["backbone"],
            lr=float(t["lr"]),
            weight_decay=float(t["weight_decay"]),
            batch_size=int(t["batch_size"]),
            epochs=int(t["epochs"]),
            contrastive_margin=float(cfg["loss"]["contrastive_margin"]),
            triplet_margin=float(cfg["loss"]["triplet_margin"]),
            seed=int(cfg["seed"]),
            val_fraction=float(t["val_fraction"]),
            checkpoint_dir=str(cfg["out"]),
            input_size=tuple(cfg["preprocess"]["target_size"]),
            workers=int(t["workers"]),
            class_sampling=t["class_sampling"],
            val_batches=int(t["val_batches"]),
            backbone_config=dict(t["backbone_config"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(cfg: dict) -> int:
    root = _require(cfg, cfg["data"]["root"], "--root")
    _require(cfg, cfg["out"], "--out")
    tc = _train_config(cfg)
    out = Path(cfg["out"])
    write_resolved(cfg, out, "train")
    corpus = scan_corpus(_split_dir(root, "train"), "train")
    try:
        ckpt, history = train(tc, corpus, _preprocess(cfg, augment=True))
    except NonFiniteLossError as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return 1
    (out / "history.json").write_text(
        json.dumps({"loss": tc.loss_name, "epochs": [asdict(h) for h in history]}, indent=2) + "\n", encoding="utf-8"
    )
    print(json.dumps({"loss": tc.loss_name, "epochs": len(history), "best_epoch": best_epoch(history)}))
    return 0


def _resolve_checkpoint(path: Path, max_epoch: int | None):
    if path.is_file():
        return load_checkpoint(path)
    if not path.is_dir():
        raise CheckpointError(f"{path}: no such checkpoint file or directory")
    found = sorted((int(m.group(1)), p) for p in path.iterdir() if (m := _CKPT_RE.search(p.name)))
    if not found:
        raise CheckpointError(f"{path}: directory holds no model_e*.ckpt files")
    history = [EpochStats(**h) for h in load_checkpoint(found[-1][1]).history]
    return select_best(history, path, max_epoch)


def cmd_evaluate(cfg: dict) -> int:
    root = _require(cfg, cfg["data"]["root"], "--root")
    ev = cfg["evaluate"]
    ckpt_path = Path(_require(cfg, ev["checkpoint"], "--checkpoint"))
    out = Path(cfg["out"] or ".")
    test_root = _split_dir(root, "test")
    pairs_path = Path(cfg["data"]["pairs"]) if cfg["data"]["pairs"] else Path(root) / PAIRS_NAME
    pairs = read_pairs(pairs_path)
    ckpt = _resolve_checkpoint(ckpt_path, ev["max_epoch"])
    preprocess = _preprocess(cfg, augment=False)
    preprocess = PreprocessConfig(**{**asdict(preprocess), "target_size": tuple(ckpt.input_size)})
    report = build_report(score_pairs(ckpt, pairs, test_root, preprocess, int(ev["batch_size"])))
    report.extra = {"checkpoint_epoch": ckpt.epoch, "architecture": ckpt.arch, "loss": ckpt.loss, "n_pairs": len(pairs.rows)}
    emit_report(report, out)
    write_resolved(cfg, out, "evaluate")
    print(json.dumps(report.summary()))
    print(
        f"{ckpt.arch} epoch {ckpt.epoch}: AUC {report.auc:.4f}  ACC {report.acc:.2f}%  "
        f"FAR {report.far:.2f}%  FRR {report.frr:.2f}%  threshold {report.threshold:.4f}",
        file=sys.stderr,
    )
    return 0


# -------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config file")
    common.add_argument("--seed", type=int, help="run seed (default 42)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="scribe-verify", description="Scribe verification with metric learning.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", parents=[common], help="render a synthetic scribe corpus")
    g.add_argument("--scribes", type=_positive)
    g.add_argument("--train", type=_positive, help="training images per scribe")
    g.add_argument("--test", type=int, help="test images per scribe")
    g.add_argument("--canvas", type=_positive, help="image side in pixels")

    m = sub.add_parser("make-pairs", parents=[common], help="write a fixed balanced test_pairs.csv")
    m.add_argument("--root", help="corpus root (a 'test' subfolder is used when present)")
    m.add_argument("--n", type=_even, help="number of pairs (even)")
    m.add_argument("--pairs", metavar="PATH", help="output CSV (default OUT/test_pairs.csv)")
    m.add_argument("--force", action="store_true", help="overwrite an existing CSV")

    t = sub.add_parser("train", parents=[common], help="train an embedding network")
    t.add_argument("--root", help="corpus root (a 'train' subfolder is used when present)")
    t.add_argument("--mode", choices=("siamese", "triplet"))
    t.add_argument("--backbone", choices=ARCHITECTURES)
    t.add_argument("--epochs", type=_positive)
    t.add_argument("--batch-size", type=_even)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--margin", type=float, help="margin of the selected loss")
    t.add_argument("--val-fraction", type=float)
    t.add_argument("--workers", type=int, help="image loading threads (0 = serial)")

    e = sub.add_parser("evaluate", parents=[common], help="score test pairs and write a report")
    e.add_argument("--root", help="corpus root (a 'test' subfolder is used when present)")
    e.add_argument("--checkpoint", metavar="PATH", help="checkpoint file, or a training directory (best epoch)")
    e.add_argument("--pairs", metavar="PATH", help="pair CSV (default ROOT/test_pairs.csv)")
    e.add_argument("--max-epoch", type=_positive, help="restrict best-epoch selection to the first N epochs")
    e.add_argument("--batch-size", type=_positive)
    return parser


def _flags(args: argparse.Namespace) -> dict:
    flags: dict = {"seed": args.seed, "out": args.out, "data": {"root": getattr(args, "root", None)}}
    if args.command == "gen-synth":
        flags["synth"] = {"scribes": args.scribes, "train": args.train, "test": args.test, "canvas": args.canvas}
    elif args.command == "make-pairs":
        flags["data"]["pairs"] = args.pairs
        flags["pairs"] = {"n": args.n}
    elif args.command == "train":
        flags["train"] = {
            "mode": args.mode,
            "backbone": args.backbone,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "weight_decay": args.weight_decay,
            "val_fraction": args.val_fraction,
            "workers": args.workers,
        }
    elif args.command == "evaluate":
        flags["data"]["pairs"] = args.pairs
        flags["evaluate"] = {"checkpoint": args.checkpoint, "max_epoch": args.max_epoch, "batch_size": args.batch_size}
    return flags


def _apply_margin(cfg: dict, args: argparse.Namespace) -> None:
    if getattr(args, "margin", None) is not None:
        key = "contrastive_margin" if cfg["train"]["mode"] == "siamese" else "triplet_margin"
        cfg["loss"][key] = args.margin


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args.config, _flags(args))
        _apply_margin(cfg, args)
        if cfg["train"]["mode"] not in ("siamese", "triplet"):
            raise ConfigError(f"unknown mode {cfg['train']['mode']!r}")
        if cfg["train"]["backbone"] not in ARCHITECTURES:
            raise ConfigError(f"unknown backbone {cfg['train']['backbone']!r}; choose from {', '.join(ARCHITECTURES)}")
        if args.command == "gen-synth":
            return cmd_gen_synth(cfg)
        if args.command == "make-pairs":
            if cfg["pairs"]["n"] < 2 or cfg["pairs"]["n"] % 2:
                raise ConfigError(f"pairs.n must be a positive even number, got {cfg['pairs']['n']}")
            return cmd_make_pairs(cfg, args.force)
        if args.command == "train":
            return cmd_train(cfg)
        return cmd_evaluate(cfg)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, SamplingError, PairFileError, CheckpointError, MetricError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
