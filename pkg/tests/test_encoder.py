import numpy as np
import pytest

from targ import tensor as T
from targ.config import TrainConfig
from targ.corpus import CLS, Vocabulary, iter_examples
from targ.encoder import BiLSTMEncoder, TransformerEncoder, encode, pad_sequences
from targ.model import TARGModel
from targ.nn import ParamStore, RngStreams
from targ.tensor import Tape, backward


def make_encoder(n_layers=2, H=8, V=30, seed=0):
    ps = ParamStore(seed)
    table = ps.add("embedding", (V, H))
    return ps, TransformerEncoder(ps, table, H, n_layers, 2, 50, 0.1)


def test_zero_layers_returns_cls_plus_position():
    ps, enc = make_encoder(n_layers=0)
    out = encode([CLS, 12, 13, 2], enc).data
    np.testing.assert_allclose(out, ps["embedding"].data[CLS] + ps["encoder.pos"].data[0])


def test_eval_mode_is_deterministic_and_training_uses_dropout():
    _, enc = make_encoder()
    ids = [CLS, 12, 13, 14, 2]
    np.testing.assert_array_equal(encode(ids, enc).data, encode(ids, enc).data)
    a = encode(ids, enc, training=True, rngs=RngStreams(1)).data
    b = encode(ids, enc, training=True, rngs=RngStreams(1)).data
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, encode(ids, enc).data)


def test_position_sensitivity():
    _, enc = make_encoder()
    a = encode([CLS, 12, 13, 14, 2], enc).data
    b = encode([CLS, 14, 13, 12, 2], enc).data
    assert not np.allclose(a, b)


def test_length_and_vocabulary_checks():
    _, enc = make_encoder()
    with pytest.raises(ValueError):
        encode([CLS, 2], enc)
    with pytest.raises(ValueError):
        encode([CLS] + [12] * 60, enc)
    with pytest.raises(IndexError):
        encode([CLS, 99, 2], enc)
    for n in (3, 7, 20):
        assert encode([CLS] + [12] * (n - 1), enc).shape == (8,)


def test_padding_does_not_change_encoding():
    _, enc = make_encoder()
    seqs = [[CLS, 12, 2], [CLS, 12, 13, 14, 15, 2]]
    batched = enc(pad_sequences(seqs)).data
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(batched[i], encode(s, enc).data, atol=1e-12)


def test_bilstm_mode_and_padding():
    ps = ParamStore(0)
    table = ps.add("embedding", (30, 8))
    enc = BiLSTMEncoder(ps, table, 8, 50, 0.0)
    seqs = [[CLS, 12, 2], [CLS, 12, 13, 14, 15, 2]]
    batched = enc(pad_sequences(seqs)).data
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(batched[i], encode(s, enc).data, atol=1e-12)
    with pytest.raises(ValueError):
        BiLSTMEncoder(ps, table, 7, 50, 0.0)


def test_embedding_gradient_only_for_present_tokens():
    _, enc = make_encoder(n_layers=1)
    with Tape():
        out = (encode([CLS, 12, 13, 2], enc) * np.arange(8.0)).sum()
    backward(out, [enc.table])
    g = np.abs(enc.table.grad).sum(axis=1)
    assert np.all(g[[CLS, 2, 12, 13]] > 0)
    others = np.setdiff1d(np.arange(30), [CLS, 2, 12, 13])
    assert np.all(g[others] == 0)


def test_history_and_knowledge_shapes(small_corpus):
    vocab = Vocabulary.from_corpus(small_corpus)
    model = TARGModel(TrainConfig(hidden=8, n_heads=2, n_layers=1, dec_layers=1), vocab)
    ex = iter_examples(small_corpus)
    batch = model.make_batch(ex[:3], small_corpus)
    M = small_corpus.n_knowledge
    assert batch.sem_k.shape == (M,)
    assert batch.sem_u.shape[0] == 3
    assert batch.utt_mask[0].sum() == 1  # first system turn sees one user turn
    mat = model.topic_matrix(batch)
    assert mat.columns.shape == (3, M, 24)
    # factoid encodings do not depend on the dialogue
    b2 = model.make_batch(ex[5:6], small_corpus)
    sem = model.encoder(pad_sequences(batch.sequences)).data
    sem2 = model.encoder(pad_sequences(b2.sequences)).data
    np.testing.assert_allclose(sem[batch.sem_k], sem2[b2.sem_k], atol=1e-12)


def test_shared_encoder_flag(small_corpus):
    vocab = Vocabulary.from_corpus(small_corpus)
    shared = TARGModel(TrainConfig(hidden=8, n_heads=2), vocab)
    split = TARGModel(TrainConfig(hidden=8, n_heads=2, shared_encoder=False), vocab)
    assert shared.topic_encoder is shared.encoder
    assert split.topic_encoder is not split.encoder
    assert split.topic_encoder.table is split.encoder.table
    n_enc = sum(t.size for n, t in split.params.items() if n.startswith("encoder."))
    n_top = sum(t.size for n, t in split.params.items() if n.startswith("topic_encoder."))
    assert n_enc == n_top
