"""Checkpoint files: JSON header + little-endian float64 blob.

Layout::

    8 bytes   header length N (unsigned little-endian)
    N bytes   UTF-8 JSON header
    rest      concatenated tensors, '<f8', C order

The header holds the format version, model config, vocabulary, free-form
metadata and a tensor index of ``{name, shape, offset}`` (byte offsets into
the blob).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Vocab
from .model import ModelConfig, parameter_shapes
from .tensor import Tensor

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocab
    params: dict[str, Tensor]
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, cfg: ModelConfig, vocab: Vocab, params: dict, extra: dict | None = None,
                    meta: dict | None = None) -> None:
    arrays = {k: (v.data if isinstance(v, Tensor) else np.asarray(v)) for k, v in params.items()}
    extras = {k: np.asarray(v) for k, v in (extra or {}).items()}
    index, chunks, offset = [], [], 0
    for group, table in (("param", arrays), ("extra", extras)):
        for name, arr in table.items():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            index.append({"name": name, "group": group, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "model_config": cfg.to_json(),
              "vocab": vocab.to_json(), "meta": meta or {}, "tensors": index}
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    blob = raw[8 + n:]
    cfg = ModelConfig.from_json(header["model_config"])
    vocab = Vocab.from_json(header["vocab"])
    if len(vocab) != cfg.vocab_size:
        raise CheckpointError(f"vocabulary size {len(vocab)} != config vocab_size {cfg.vocab_size}")
    expected = parameter_shapes(cfg)
    params, extra = {}, {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start, stop = entry["offset"], entry["offset"] + 8 * count
        if stop > len(blob):
            raise CheckpointError(f"tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(blob[start:stop], dtype="<f8").reshape(shape).astype(np.float64)
        if entry.get("group", "param") == "param":
            want = expected.get(entry["name"])
            if want is None:
                raise CheckpointError(f"unexpected parameter {entry['name']}")
            if want[0] != shape:
                raise CheckpointError(f"{entry['name']}: shape {shape} != config shape {want[0]}")
            params[entry["name"]] = Tensor(arr, requires_grad=True)
        else:
            extra[entry["name"]] = arr
    missing = sorted(set(expected) - set(params))
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing}")
    return Checkpoint(cfg, vocab, params, extra, header.get("meta", {}))
