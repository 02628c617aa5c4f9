"""Self-describing checkpoint files.

Layout::

    b"ERRATACK"                       8-byte magic
    uint64 little-endian              header length N
    N bytes UTF-8 JSON header         {format_version, model_config, vocabulary,
                                       tensors: [{name, shape, offset}], ...}
    raw little-endian float32 blobs   in directory order; offsets are byte
                                      offsets from the end of the header
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
import torch

from .model import ErrorDetectionModel, ModelConfig
from .tokens import vocabulary_table

MAGIC = b"ERRATACK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: ErrorDetectionModel
    header: dict
    extra: dict[str, np.ndarray] = field(default_factory=dict)


def _atomic_write(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(model: ErrorDetectionModel, extra: dict | None = None,
          header_extra: dict | None = None) -> bytes:
    tensors = [(name, t.detach().cpu().numpy()) for name, t in model.state_dict().items()]
    tensors += [(name, np.asarray(v)) for name, v in (extra or {}).items()]
    directory, blobs, offset = [], [], 0
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {"format_version": FORMAT_VERSION, "model_config": model.cfg.to_dict(),
              "vocabulary": vocabulary_table(), "tensors": directory,
              "n_model_tensors": len(model.state_dict())}
    header.update(header_extra or {})
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)


def save_checkpoint(path, model: ErrorDetectionModel, extra: dict | None = None,
                    header_extra: dict | None = None):
    _atomic_write(path, dumps(model, extra, header_extra))


def read_header(data: bytes) -> tuple[dict, int]:
    if data[:8] != MAGIC:
        raise CheckpointError("not an errata checkpoint (bad magic)")
    if len(data) < 16:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", data[8:16])
    if 16 + n > len(data):
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(data[16:16 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {header.get('format_version')}")
    return header, 16 + n


def loads(data: bytes, expect_config: ModelConfig | None = None) -> Checkpoint:
    header, base = read_header(data)
    cfg = ModelConfig(**header["model_config"])
    if expect_config is not None and expect_config != cfg:
        raise CheckpointError("checkpoint model config does not match the requested config")
    model = ErrorDetectionModel(cfg)
    state = model.state_dict()
    arrays = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = base + entry["offset"]
        stop = start + 4 * count
        if stop > len(data):
            raise CheckpointError(f"truncated tensor {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data[start:stop], dtype="<f4").reshape(entry["shape"])
    missing = set(state) - set(arrays)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
    for name, t in state.items():
        if tuple(arrays[name].shape) != tuple(t.shape):
            raise CheckpointError(f"shape mismatch for {name}")
    model.load_state_dict({k: torch.from_numpy(arrays[k].copy()) for k in state})
    model.eval()
    extra = {k: v for k, v in arrays.items() if k not in state}
    return Checkpoint(model, header, extra)


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read(), expect_config)


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
