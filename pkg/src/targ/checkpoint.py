"""Binary checkpoint: length-prefixed JSON header followed by little-endian float64 blobs.

Layout::

    uint64 LE  header length in bytes
    header     canonical JSON (sorted keys, no whitespace)
    blobs      each tensor's raw '<f8' bytes, in directory order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ConfigError, train_config
from .corpus import Vocabulary
from .io import atomic_write_bytes

FORMAT_VERSION = 1
_DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model) -> bytes:
    directory = {}
    blobs = []
    offset = 0
    for name, t in model.params.items():
        raw = np.ascontiguousarray(t.data, dtype=_DTYPE).tobytes()
        directory[name] = {"shape": list(t.shape), "dtype": _DTYPE, "offset": offset,
                           "length": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "H": model.config.hidden,
        "n_layers": model.config.n_layers,
        "vocab_sha256": model.vocab.sha256(),
        "vocab": model.vocab.tokens,
        "max_turns": model.vocab.max_turns,
        "config": model.config.to_dict(),
        "tensors": directory,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return struct.pack("<Q", len(hb)) + hb + b"".join(blobs)


def save_checkpoint(model, path: str | Path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model))


def read_header(data: bytes) -> tuple[dict, int]:
    if len(data) < 8:
        raise CheckpointError("truncated checkpoint: missing header length")
    (n,) = struct.unpack("<Q", data[:8])
    if 8 + n > len(data):
        raise CheckpointError("truncated checkpoint: header extends past end of file")
    try:
        header = json.loads(data[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format_version')!r}")
    return header, 8 + n


def load_checkpoint(path: str | Path, expect_vocab: Vocabulary | None = None):
    """Rebuild the model stored at ``path``; every tensor's shape is checked."""
    from .model import TARGModel

    data = Path(path).read_bytes()
    header, base = read_header(data)
    vocab = Vocabulary(header["vocab"], header["max_turns"])
    if vocab.sha256() != header["vocab_sha256"]:
        raise CheckpointError("vocabulary hash does not match the stored token list")
    if expect_vocab is not None and expect_vocab.sha256() != header["vocab_sha256"]:
        raise CheckpointError("checkpoint vocabulary differs from the expected vocabulary")
    try:
        config = train_config(header["config"])
    except ConfigError as e:
        raise CheckpointError(f"checkpoint config invalid: {e}") from None
    model = TARGModel(config, vocab)
    directory = header["tensors"]
    if set(directory) != set(model.params.tensors):
        missing = set(model.params.tensors) ^ set(directory)
        raise CheckpointError(f"tensor directory mismatch: {sorted(missing)[:5]}")
    for name, t in model.params.items():
        entry = directory[name]
        if tuple(entry["shape"]) != t.shape:
            raise CheckpointError(f"{name}: stored shape {entry['shape']} != expected {list(t.shape)}")
        if entry["dtype"] != _DTYPE:
            raise CheckpointError(f"{name}: unsupported dtype {entry['dtype']}")
        start = base + entry["offset"]
        end = start + entry["length"]
        if end > len(data) or entry["length"] != t.data.nbytes:
            raise CheckpointError(f"{name}: blob out of range or wrong length")
        t.data[...] = np.frombuffer(data, dtype=_DTYPE, count=t.data.size, offset=start).reshape(t.shape)
    return model
