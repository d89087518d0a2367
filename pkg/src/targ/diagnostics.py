"""Finite-difference checks of every model stage on a tiny instance.

Sizes: N=2 utterances, M=3 knowledge positions, H=4, |V|=12. Each stage is
reduced to a scalar through a fixed random projection so no coordinate has a
structurally zero gradient.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import AttentionParameters, topic_aware_matrix
from .config import TrainConfig
from .corpus import BOS, EOS, Vocabulary
from .generator import ResponseDecoder, SpanFusion
from .gradcheck import GradCheckResult, grad_check_detailed
from .model import Batch, TARGModel
from .nn import ParamStore
from .selector import SelectorParameters, predict_span_distributions
from .tensor import Tensor

N_UTT, N_KNOW, HIDDEN, VOCAB = 2, 3, 4, 12
THRESHOLD = 1e-4


def _rand(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _project(x: Tensor, rng) -> Tensor:
    return (x * rng.normal(size=x.shape)).sum()


def check_topic_matrix(seed: int = 0, variant: str = "elementwise") -> GradCheckResult:
    """Three attention mechanisms, feature interaction and aggregation into K."""
    rng = np.random.default_rng(seed)
    ps = ParamStore(seed)
    params = AttentionParameters.create(ps, HIDDEN)
    params.b_f.data[...] = 0.3
    S_u, T_u = _rand(rng, N_UTT, HIDDEN), _rand(rng, N_UTT, HIDDEN)
    S_k, T_k = _rand(rng, N_KNOW, HIDDEN), _rand(rng, N_KNOW, HIDDEN)
    R = rng.normal(size=(N_KNOW, 3 * HIDDEN))

    def f():
        m = topic_aware_matrix(S_u, T_u, S_k, T_k, params, variant=variant)
        return (m.columns * R).sum()

    return grad_check_detailed(f, [S_u, T_u, S_k, T_k, *ps])


def check_selector(seed: int = 0) -> GradCheckResult:
    """Start/end distributions and their log-likelihood at a gold span."""
    rng = np.random.default_rng(seed)
    ps = ParamStore(seed)
    sel = SelectorParameters.create(ps, HIDDEN, 8)
    cols = _rand(rng, N_KNOW, 3 * HIDDEN)

    def f():
        p_s, p_e = predict_span_distributions(cols, sel)
        return -(T.log(p_s[1]) + T.log(p_e[2]))

    return grad_check_detailed(f, [cols, *ps])


def check_span_fusion(seed: int = 0, width: int = 3) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    ps = ParamStore(seed)
    fusion = SpanFusion(ps, HIDDEN)
    for t in ps:
        if t.name.endswith(".b"):
            t.data[...] = rng.normal(0.0, 0.1, size=t.shape)
    span = _rand(rng, width, 3 * HIDDEN)
    R = rng.normal(size=HIDDEN)
    return grad_check_detailed(lambda: (fusion(span) * R).sum(), [span, *ps])


def check_decoder_output(seed: int = 0) -> GradCheckResult:
    """Decoder states, vocabulary distribution and gold-token likelihood."""
    rng = np.random.default_rng(seed)
    ps = ParamStore(seed)
    table = ps.add("embedding", (VOCAB, HIDDEN))
    dec = ResponseDecoder(ps, table, HIDDEN, 1, 2, 6, 0.0)
    ps["decoder.b_v"].data[...] = 0.1
    fusion = _rand(rng, 1, HIDDEN)
    memory = _rand(rng, 1, 2, 3 * HIDDEN)
    inputs = np.array([[BOS, 10, 11]])
    gold = np.array([[10, 11, EOS]])

    def f():
        h = dec.hidden_states(inputs, fusion, dec.memory(memory), np.ones((1, 2), bool))
        p = dec.distribution(h)
        return -T.log(T.take_along_last(p, gold[..., None])).sum()

    return grad_check_detailed(f, [fusion, memory, *ps])


def tiny_model(seed: int = 0, lam: float = 0.5) -> tuple[TARGModel, Batch]:
    """A complete model with a 12-token vocabulary and a hand-built two-example batch."""
    vocab = Vocabulary(max_turns=2)
    assert len(vocab) == VOCAB
    cfg = TrainConfig(hidden=HIDDEN, n_layers=1, n_heads=2, dec_layers=1, max_factoids=N_KNOW,
                      max_len=8, max_decode_len=6, dropout=0.0, lam=lam, seed=seed)
    model = TARGModel(cfg, vocab)
    rng = np.random.default_rng(seed + 1)
    for t in model.params:
        if np.all(t.data == 0):
            t.data[...] = rng.normal(0.0, 0.1, size=t.shape)
    # ids 9..11 are [POS_0]..[POS_2]; 3..5 mode tokens; 8 [UNK]
    seqs = [
        [1, 8, 2, 5, 2], [1, 8, 2, 5, 2, 9, 2],  # pseudo-factoid
        [1, 10, 8, 2, 5, 2], [1, 11, 2, 5, 2, 9, 2],  # factoid 1
        [1, 11, 10, 2, 5, 2], [1, 10, 2, 5, 2, 9, 2],  # factoid 2
        [1, 8, 11, 2, 3, 2], [1, 10, 2, 3, 2, 10, 2],  # user utterance
        [1, 10, 2, 4, 2], [1, 11, 2, 4, 2, 11, 2],  # system utterance
    ]
    batch = Batch(
        examples=[], sequences=seqs,
        sem_u=np.array([[6, 8], [6, 0]]), top_u=np.array([[7, 9], [7, 0]]),
        utt_mask=np.array([[True, True], [True, False]]),
        sem_k=np.array([0, 2, 4]), top_k=np.array([1, 3, 5]),
        gold_span=np.array([[1, 2], [0, 0]]),
        dec_in=np.array([[BOS, 10, 11], [BOS, 0, 0]]),
        dec_out=np.array([[10, 11, EOS], [EOS, 0, 0]]),
        dec_mask=np.array([[True, True, True], [True, False, False]]),
    )
    return model, batch


def check_joint_loss(seed: int = 0, lam: float = 0.5) -> GradCheckResult:
    from .training import compute_losses

    model, batch = tiny_model(seed, lam)
    return grad_check_detailed(lambda: compute_losses(model, batch, None, False)[0],
                               list(model.params))


CHECKS = {
    "topic_attention": check_topic_matrix,
    "knowledge_selection": check_selector,
    "span_fusion": check_span_fusion,
    "response_distribution": check_decoder_output,
    "joint_loss": check_joint_loss,
}


def run_all(seed: int = 0) -> dict[str, GradCheckResult]:
    return {name: fn(seed) for name, fn in CHECKS.items()}
