import itertools

import numpy as np
import pytest

from targ import tensor as T
from targ.generator import ResponseDecoder, SpanFusion
from targ.nn import ParamStore
from targ.tensor import Tensor


def conv_same(x, w, b):
    k, cin, cout = w.shape
    L = x.shape[0]
    out = np.zeros((L, cout))
    for t in range(L):
        for j in range(k):
            src = t + j - (k - 1) // 2
            if 0 <= src < L:
                out[t] += x[src] @ w[j]
    return out + b


def pool_same(x, k=3):
    L = x.shape[0]
    return np.array([x[max(0, t - 1):min(L, t - 1 + k)].max(axis=0) for t in range(L)])


def fusion_oracle(fusion, span):
    x = span
    for w, b in fusion.convs:
        x = pool_same(np.maximum(conv_same(x, w.data, b.data), 0.0))
    return x.mean(axis=0) @ fusion.proj.w.data + fusion.proj.b.data


def make_fusion(H=4, seed=0):
    ps = ParamStore(seed)
    f = SpanFusion(ps, H)
    rng = np.random.default_rng(seed)
    for t in ps:
        if t.name.endswith(".b"):
            t.data[...] = rng.normal(0, 0.2, size=t.shape)
    return ps, f


@pytest.mark.parametrize("width", [1, 2, 4, 5])
def test_fusion_matches_loop_oracle(width, rng):
    _, f = make_fusion()
    span = rng.normal(size=(width, 12))
    np.testing.assert_allclose(f(Tensor(span)).data, fusion_oracle(f, span), atol=1e-12)


def test_fusion_zero_input_zero_bias_is_zero():
    ps = ParamStore(0)
    f = SpanFusion(ps, 4)
    np.testing.assert_array_equal(f(Tensor(np.zeros((3, 12)))).data, np.zeros(4))


def test_fusion_is_order_sensitive(rng):
    _, f = make_fusion()
    span = rng.normal(size=(4, 12))
    assert not np.allclose(f(Tensor(span)).data, f(Tensor(span[::-1])).data)


def test_fusion_batched_with_mask_matches_unbatched(rng):
    _, f = make_fusion()
    spans = [rng.normal(size=(w, 12)) for w in (1, 3, 5)]
    padded = np.zeros((3, 5, 12))
    mask = np.zeros((3, 5), bool)
    for i, s in enumerate(spans):
        padded[i, :len(s)] = s
        mask[i, :len(s)] = True
    out = f(Tensor(padded), mask).data
    for i, s in enumerate(spans):
        np.testing.assert_allclose(out[i], f(Tensor(s)).data, atol=1e-12)


def make_decoder(V=12, H=4, seed=0, max_len=6, bos=3, eos=4):
    ps = ParamStore(seed)
    table = ps.add("embedding", (V, H), scale=1.0)
    dec = ResponseDecoder(ps, table, H, 1, 2, max_len, 0.0, bos=bos, eos=eos)
    rng = np.random.default_rng(seed + 100)
    fusion = rng.normal(size=H)
    memory = rng.normal(size=(2, H))
    return ps, dec, fusion, memory, np.ones(2, bool)


def test_decode_step_distribution_and_uniform_case():
    ps, dec, f, mem, mm = make_decoder()
    state = dec.init_state(f, mem, mm)
    h, p = dec.decode_step(dec.bos, state)
    assert abs(p.sum() - 1.0) < 1e-12 and h.shape == (4,)
    ps["decoder.W_v"].data[...] = 0.0
    _, p = dec.decode_step(7, state)
    np.testing.assert_allclose(p, np.full(12, 1 / 12), atol=1e-15)


def test_decode_state_exhaustion_and_determinism():
    _, dec, f, mem, mm = make_decoder(max_len=3)
    s1, s2 = dec.init_state(f, mem, mm), dec.init_state(f, mem, mm)
    for tok in (dec.bos, 5, 6):
        a, b = dec.decode_step(tok, s1), dec.decode_step(tok, s2)
        np.testing.assert_array_equal(a[1], b[1])
    with pytest.raises(RuntimeError):
        dec.decode_step(5, s1)


def test_decode_steps_match_teacher_forced_states():
    _, dec, f, mem, mm = make_decoder()
    toks = [dec.bos, 7, 8, 9]
    h_all = dec.hidden_states(np.array([toks]), Tensor(f[None]), dec.memory(Tensor(np.tile(mem, (1, 3))[None])),
                              mm[None]).data[0]
    state = dec.init_state(f, dec.memory(Tensor(np.tile(mem, (1, 3)))).data, mm)
    for t, tok in enumerate(toks):
        h, _ = dec.decode_step(tok, state)
        np.testing.assert_allclose(h, h_all[t], atol=1e-12)


def projected(dec, mem):
    return dec.memory(Tensor(np.tile(mem, (1, 3)))).data


def test_eos_certain_gives_empty_response():
    _, dec, f, mem, mm = make_decoder()
    bias = np.where(np.arange(12) == dec.eos, 1e3, 0.0)
    dec.logits = lambda h: Tensor(bias + 0.0 * h.data[..., :1])
    assert dec.greedy(f[None], projected(dec, mem)[None], mm[None]) == [[]]
    assert dec.beam(f, projected(dec, mem), mm, 3) == []


def test_greedy_equals_beam_one_and_batching():
    for seed in range(5):
        _, dec, f, mem, mm = make_decoder(seed=seed)
        m = projected(dec, mem)
        g = dec.greedy(f[None], m[None], mm[None])[0]
        assert g == dec.beam(f, m, mm, 1)
    _, dec, f, mem, mm = make_decoder(seed=1)
    fs = np.stack([f, -f, 0.5 * f])
    ms = np.stack([projected(dec, mem)] * 3)
    batch = dec.greedy(fs, ms, np.ones((3, 2), bool))
    for i in range(3):
        assert batch[i] == dec.greedy(fs[i:i + 1], ms[i:i + 1], np.ones((1, 2), bool))[0]


def normalized_score(dec, f, m, mm, toks, max_len):
    full = toks + [dec.eos] if len(toks) < max_len else toks
    return dec.sequence_logprob(f, m, mm, full) / len(full)


def exhaustive_best(dec, f, m, mm, V, max_len):
    best = -np.inf
    for L in range(1, max_len + 1):
        for body in itertools.product([t for t in range(V) if t != dec.eos], repeat=L - 1):
            best = max(best, normalized_score(dec, f, m, mm, list(body), max_len))
        if L == max_len:
            for body in itertools.product([t for t in range(V) if t != dec.eos], repeat=L):
                best = max(best, normalized_score(dec, f, m, mm, list(body), max_len))
    return best


def test_beam_between_greedy_and_exhaustive_optimum():
    V, horizon = 5, 4
    for seed in range(6):
        _, dec, f, mem, mm = make_decoder(V=V, seed=seed, max_len=horizon, bos=3, eos=4)
        m = projected(dec, mem)
        g = dec.greedy(f[None], m[None], mm[None], horizon)[0]
        b = dec.beam(f, m, mm, 3, horizon)
        sg = normalized_score(dec, f, m, mm, g, horizon)
        sb = normalized_score(dec, f, m, mm, b, horizon)
        opt = exhaustive_best(dec, f, m, mm, V, horizon)
        assert sb >= sg - 1e-12
        assert sb <= opt + 1e-12


def test_teacher_forced_likelihood_matches_stepwise():
    _, dec, f, mem, mm = make_decoder()
    m = projected(dec, mem)
    toks = [7, 8, dec.eos]
    state = dec.init_state(f, m, mm)
    total = 0.0
    for prev, tok in zip([dec.bos] + toks[:-1], toks):
        _, p = dec.decode_step(prev, state)
        total += np.log(p[tok])
    assert abs(total - dec.sequence_logprob(f, m, mm, toks)) < 1e-10


def test_decoder_input_length_limit():
    _, dec, f, mem, mm = make_decoder(max_len=3)
    with pytest.raises(ValueError):
        dec.hidden_states(np.zeros((1, 5), int), Tensor(f[None]), Tensor(mem[None]), mm[None])
