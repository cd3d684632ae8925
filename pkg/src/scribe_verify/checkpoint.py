"""Self-describing binary checkpoint container.

Layout (all integers little-endian)::

    b"SCRV" | u32 version | u64 header_len | header (UTF-8 JSON) | tensor payloads

The header records the architecture tag, backbone config, input size, epoch,
run seed, loss history and an index of named tensors (dtype, shape, offset
into the payload, byte length).  Payloads are raw little-endian arrays.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbones import EmbeddingNet, build_backbone

MAGIC = b"SCRV"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint container (bad magic or unparsable header)."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    arch: str
    model_config: dict
    input_size: tuple[int, int]
    tensors: dict[str, np.ndarray]
    epoch: int = 0
    seed: int = 42
    loss: str = ""
    history: list[dict] = field(default_factory=list)
    train_config: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, model: EmbeddingNet, **meta) -> "Checkpoint":
        tensors = {name: np.array(value, copy=True) for name, value in model.state_dict().items()}
        return cls(model.arch, model.config_dict(), model.input_size, tensors, **meta)

    def build_model(self) -> EmbeddingNet:
        """Materialize the network in eval mode."""
        model = build_backbone(self.arch, self.model_config, self.input_size)
        model.load_state_dict(self.tensors)
        return model.eval()


def checkpoint_name(epoch: int) -> str:
    return f"model_e{epoch}.ckpt"


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    index = []
    offset = 0
    blobs = []
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "architecture": ckpt.arch,
        "config": ckpt.model_config,
        "input_size": list(ckpt.input_size),
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "loss": ckpt.loss,
        "history": ckpt.history,
        "train_config": ckpt.train_config,
        "tensors": index,
        "payload_bytes": offset,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expected_arch: str | None = None) -> Checkpoint:
    """Read and validate a container; nothing is materialized unless all checks pass."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        if data[:4] and not MAGIC.startswith(data[:4]):
            raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
        raise CheckpointTruncatedError(f"{path}: file ends inside the fixed prefix")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {VERSION}")
    start = _PREFIX.size
    if len(data) < start + header_len:
        raise CheckpointTruncatedError(f"{path}: file ends inside the header")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header ({exc})") from exc
    arch = header["architecture"]
    if expected_arch is not None and arch != expected_arch:
        raise ArchitectureMismatchError(f"{path}: checkpoint holds {arch!r}, expected {expected_arch!r}")
    payload = data[start + header_len :]
    if len(payload) < header["payload_bytes"]:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(payload)} bytes, header declares {header['payload_bytes']}"
        )
    tensors = {}
    for entry in header["tensors"]:
        chunk = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return Checkpoint(
        arch=arch,
        model_config=header["config"],
        input_size=tuple(header["input_size"]),
        tensors=tensors,
        epoch=header["epoch"],
        seed=header["seed"],
        loss=header["loss"],
        history=header["history"],
        train_config=header["train_config"],
        version=version,
    )
