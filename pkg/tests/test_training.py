import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from targ import tensor as T
from targ.config import TrainConfig
from targ.diagnostics import tiny_model
from targ.synthetic import SyntheticConfig, generate_synthetic
from targ.tensor import Tape, Tensor
from targ.training import (Adam, ClampCounter, TrainingError, compute_losses, dialogue_batches,
                           generation_loss, joint_loss, joint_step, selection_loss, train)
from targ.corpus import Corpus, iter_examples
from targ.nn import RngStreams


def test_selection_loss_examples():
    onehot = Tensor(np.eye(4)[[2]])
    assert selection_loss(onehot, Tensor(np.eye(4)[[3]]), np.array([[2, 3]])).item() == 0.0
    u = Tensor(np.full(4, 0.25))
    assert abs(selection_loss(u, u, np.array([1, 2])).item() - 2 * math.log(4)) < 1e-12
    with pytest.raises(IndexError):
        selection_loss(u, u, np.array([1, 4]))


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_selection_loss_decreases_with_gold_probability(p, dp):
    def loss(q):
        rest = (1 - q) / 3
        d = Tensor(np.array([q, rest, rest, rest]))
        return selection_loss(d, d, np.array([0, 0])).item()
    assert loss(p + dp) < loss(p)


def test_zero_gold_probability_is_clamped_and_counted():
    c = ClampCounter()
    z = Tensor(np.array([0.0, 1.0]))
    loss = selection_loss(z, z, np.array([0, 1]), c).item()
    assert abs(loss + math.log(1e-12)) < 1e-9 and c.count == 1


def test_generation_loss_examples():
    assert generation_loss(Tensor(np.ones((2, 3)))).item() == 0.0
    assert abs(generation_loss(Tensor(np.full(3, 0.1))).item() - math.log(10)) < 1e-12
    probs = np.array([0.5, 0.25, 0.8])
    base = generation_loss(Tensor(probs)).item()
    # an extra EOS at probability 1 adds zero loss but one position
    with_eos = generation_loss(Tensor(np.append(probs, 1.0))).item()
    assert abs(with_eos * 4 / 3 - base) < 1e-12
    mask = np.array([[True, True, False]])
    masked = generation_loss(Tensor(np.array([[0.5, 0.25, 1e-30]])), mask).item()
    assert abs(masked - (math.log(2) + math.log(4)) / 2) < 1e-12
    with pytest.raises(ValueError):
        generation_loss(Tensor(np.ones((1, 2))), np.zeros((1, 2), bool))


def test_joint_loss_arithmetic():
    assert joint_loss(Tensor(2.0), Tensor(4.0), 0.5).item() == 3.0


@given(st.floats(0, 1), st.floats(0, 50), st.floats(0, 50))
def test_joint_loss_is_convex_combination(lam, a, b):
    v = joint_loss(Tensor(a), Tensor(b), lam).item()
    assert min(a, b) - 1e-9 <= v <= max(a, b) + 1e-9


def _grads(lam, ablation="full"):
    model, batch = tiny_model(0, lam)
    if ablation != "full":
        object.__setattr__(model.config, "ablation", ablation)
    with Tape():
        loss, _, _ = compute_losses(model, batch, None, False)
    params = list(model.params)
    T.backward(loss, params)
    return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in model.params.items()}


def test_lambda_one_gives_zero_decoder_gradient():
    g = _grads(1.0)
    dec = [n for n in g if n.startswith(("decoder.", "fusion."))]
    assert dec and all(np.all(g[n] == 0) for n in dec)
    assert np.any(g["selector.W_s"] != 0)


def test_lambda_zero_gives_zero_selector_gradient():
    g = _grads(0.0)
    for n in ("selector.W_s", "selector.b_s", "selector.W_e", "selector.b_e"):
        assert np.all(g[n] == 0), n
    assert np.any(g["decoder.W_v"] != 0)


def test_no_topic_attention_leaves_score_parameters_untouched():
    g = _grads(0.5, "no_topic_attention")
    for n in ("attention.w_d", "attention.W_b", "attention.w_o"):
        assert np.all(g[n] == 0), n
    assert np.any(g["attention.W_f"] != 0)


def test_adam_matches_hand_computation():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    grads = [np.array([0.5, -1.0]), np.array([0.1, 0.3])]
    m = v = np.zeros(2)
    x = p.data.copy()
    for t, g in enumerate(grads, start=1):
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, x, rtol=1e-14)
    opt.zero_grad()
    assert p.grad is None


def test_dialogue_batches_keep_dialogues_together(small_corpus):
    ex = iter_examples(small_corpus)
    batches = dialogue_batches(ex, 3, np.random.default_rng(0))
    assert sorted(id(e) for b in batches for e in b) == sorted(id(e) for e in ex)
    for b in batches:
        assert len({e.dialogue_id for e in b}) <= 3
    seen = [e.dialogue_id for b in batches for e in b]
    assert all(seen.index(d) + seen.count(d) - 1 == len(seen) - 1 - seen[::-1].index(d) for d in set(seen))


TINY = dict(hidden=16, n_layers=1, n_heads=2, dec_layers=1, epochs=2, seed=5)


@pytest.fixture(scope="module")
def ten_dialogues():
    return generate_synthetic(SyntheticConfig(topics=3, factoids_per_topic=3, n_dialogues=10, seed=11))


def test_two_epochs_reduce_loss_and_are_deterministic(ten_dialogues, tmp_path):
    cfg = TrainConfig(epochs=2, seed=7)
    a = train(ten_dialogues, ten_dialogues, cfg, log_path=tmp_path / "a.jsonl")
    b = train(ten_dialogues, ten_dialogues, cfg, log_path=tmp_path / "b.jsonl")
    assert a.history[1]["L"] <= a.history[0]["L"]
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert len(lines) == 2 and '"L_s"' in lines[0] and '"dev"' in lines[0]
    for (n, x), (_, y) in zip(a.model.params.items(), b.model.params.items()):
        np.testing.assert_array_equal(x.data, y.data, err_msg=n)


def test_parameter_count_is_constant(ten_dialogues):
    cfg = TrainConfig(**TINY)
    from targ.model import TARGModel
    from targ.corpus import Vocabulary
    model = TARGModel(cfg, Vocabulary.from_corpus(ten_dialogues))
    before = {n: t.shape for n, t in model.params.items()}
    opt = Adam(list(model.params), 1e-3)
    for group in dialogue_batches(iter_examples(ten_dialogues), 4, None):
        joint_step(model, model.make_batch(group, ten_dialogues), opt, RngStreams(0))
    assert {n: t.shape for n, t in model.params.items()} == before


def test_non_finite_loss_aborts(ten_dialogues):
    from targ.model import TARGModel
    from targ.corpus import Vocabulary
    model = TARGModel(TrainConfig(**TINY), Vocabulary.from_corpus(ten_dialogues))
    model.params["selector.W_s"].data[...] = np.nan
    batch = model.make_batch(iter_examples(ten_dialogues)[:3], ten_dialogues)
    with pytest.raises((TrainingError, T.NonFiniteError)):
        joint_step(model, batch, Adam(list(model.params), 1e-3), RngStreams(0))


def test_empty_corpus_rejected(ten_dialogues):
    empty = Corpus(ten_dialogues.documents, [])
    with pytest.raises(TrainingError):
        train(empty, None, TrainConfig(**TINY))
