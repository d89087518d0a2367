import json
import struct

import numpy as np
import pytest

from targ.checkpoint import (CheckpointError, checkpoint_bytes, load_checkpoint, read_header,
                             save_checkpoint)
from targ.config import TrainConfig
from targ.corpus import Vocabulary
from targ.model import TARGModel


@pytest.fixture
def model(small_corpus):
    m = TARGModel(TrainConfig(hidden=8, n_heads=2, n_layers=1, dec_layers=1, seed=4),
                  Vocabulary.from_corpus(small_corpus))
    rng = np.random.default_rng(0)
    for t in m.params:
        t.data[...] += rng.normal(size=t.shape)
    return m


def test_round_trip_is_byte_identical(model, tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    loaded = load_checkpoint(p, expect_vocab=model.vocab)
    assert checkpoint_bytes(loaded) == p.read_bytes()
    for (n, a), (_, b) in zip(model.params.items(), loaded.params.items()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=n)
    assert loaded.config == model.config


def test_header_layout(model):
    data = checkpoint_bytes(model)
    header, base = read_header(data)
    assert struct.unpack("<Q", data[:8])[0] == base - 8
    assert header["H"] == 8 and header["n_layers"] == 1 and header["format_version"] == 1
    emb = header["tensors"]["embedding"]
    assert emb["dtype"] == "<f8" and emb["offset"] == 0
    blob = np.frombuffer(data, "<f8", count=int(np.prod(emb["shape"])), offset=base)
    np.testing.assert_array_equal(blob.reshape(emb["shape"]), model.params["embedding"].data)


def test_vocabulary_mismatch(model, tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    other = Vocabulary(max_turns=model.vocab.max_turns)
    with pytest.raises(CheckpointError):
        load_checkpoint(p, expect_vocab=other)


def test_shape_mismatch_and_truncation(model, tmp_path):
    data = checkpoint_bytes(model)
    _, base = read_header(data)
    p = tmp_path / "m.ckpt"
    text = data[8:base].decode()
    h = json.loads(text)
    h["tensors"]["selector.W_s"]["shape"] = [h["tensors"]["selector.W_s"]["shape"][0] + 1]
    hb = json.dumps(h, sort_keys=True, separators=(",", ":")).encode()
    p.write_bytes(struct.pack("<Q", len(hb)) + hb + data[base:])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    for cut in (4, base - 3, len(data) - 8):
        p.write_bytes(data[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(p)
