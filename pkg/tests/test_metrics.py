import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from targ.metrics import (MetricsReport, bleu_x, build_report, exact_match, knowledge_change_stats,
                          lcs_length, mrr_at_5, recall_at_5, rouge_sentence, rouge_x, token_f1)


# ---- naive oracles: list-based counting, full DP table, no shared helpers ----

def naive_grams(toks, n):
    return [tuple(toks[i:i + n]) for i in range(len(toks) - n + 1)]


def naive_clipped(cand, ref, n):
    cg, rg = naive_grams(cand, n), naive_grams(ref, n)
    return sum(min(cg.count(g), rg.count(g)) for g in set(cg)), len(cg)


def naive_bleu(cands, refs, X, eps=1e-9):
    c = sum(map(len, cands))
    r = sum(map(len, refs))
    if c == 0:
        return 0.0
    prod = 1.0
    for n in range(1, X + 1):
        m = t = 0
        for a, b in zip(cands, refs):
            mm, tt = naive_clipped(a, b, n)
            m, t = m + mm, t + tt
        p = m / t if t else 0.0
        prod *= (p if p > 0 else eps) ** (1.0 / X)
    bp = math.exp(1 - r / c) if c < r else 1.0
    return bp * prod


def naive_lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i][j] = table[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def naive_f(overlap, nc, nr):
    if overlap == 0:
        return 0.0
    p, r = overlap / nc, overlap / nr
    return 2 * p * r / (p + r)


def naive_rouge(cand, ref, variant):
    if variant == "L":
        return naive_f(naive_lcs(cand, ref), len(cand), len(ref))
    n = int(variant)
    m, tc = naive_clipped(cand, ref, n)
    return naive_f(m, tc, len(naive_grams(ref, n)))


def random_pairs(seed, count=500):
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(8)]
    out = []
    for _ in range(count):
        c = list(rng.choice(words, size=rng.integers(1, 12)))
        r = list(rng.choice(words, size=rng.integers(1, 12)))
        out.append((c, r))
    return out


def test_bleu_matches_naive_oracle_on_random_pairs():
    pairs = random_pairs(0)
    for X in (1, 2, 3, 4):
        for i in range(0, 500, 25):
            chunk = pairs[i:i + 25]
            c, r = [p[0] for p in chunk], [p[1] for p in chunk]
            assert abs(bleu_x(c, r, X) - naive_bleu(c, r, X)) < 1e-9
        for c, r in pairs:
            assert abs(bleu_x([c], [r], X) - naive_bleu([c], [r], X)) < 1e-9


def test_rouge_matches_naive_oracle_on_random_pairs():
    for c, r in random_pairs(1):
        for v in ("1", "2", "L"):
            assert abs(rouge_sentence(c, r, v) - naive_rouge(c, r, v)) < 1e-9
        assert lcs_length(c, r) == naive_lcs(c, r)


# ---- worked examples ----

def test_exact_match_examples():
    assert exact_match((3, 4), (3, 4)) == 1
    assert exact_match((3, 4), (3, 5)) == 0
    assert exact_match((0, 0), (0, 0)) == 1


def test_token_f1_examples():
    assert abs(token_f1(list("abc"), list("bcd")) - 2 / 3) < 1e-12
    assert token_f1(list("abc"), list("cab")) == 1.0
    assert token_f1(list("ab"), list("xy")) == 0.0
    assert token_f1([], []) == 1.0
    assert token_f1([], ["a"]) == 0.0


def test_ranking_examples():
    assert mrr_at_5([7, 3, 1], {3}) == 0.5
    assert mrr_at_5([1, 2, 4, 5, 6, 3], {3}) == 0.0
    assert recall_at_5([1, 2, 4, 5, 6, 3], {3, 4}) == 0.5
    assert mrr_at_5([1], set()) is None and recall_at_5([1], []) is None


def test_bleu_examples():
    assert bleu_x([["the", "the", "the"]], [["the", "cat"]], 1) == pytest.approx(1 / 3, abs=1e-12)
    s = "a b c d e".split()
    for X in (1, 2, 3, 4):
        assert abs(bleu_x([s], [s], X) - 1.0) < 1e-12
    assert bleu_x([["x", "y"]], [["a", "b"]], 4, smooth=False) == 0.0
    assert bleu_x([["x", "y"]], [["a", "b"]], 4) < 1e-8
    with pytest.raises(ValueError):
        bleu_x([], [], 1)
    with pytest.raises(ValueError):
        bleu_x([["a"]], [["a"]], 5)


def test_rouge_examples():
    assert rouge_sentence("a b c d".split(), "a c d b".split(), "L") == 0.75
    s = "a b c".split()
    for v in ("1", "2", "L"):
        assert rouge_sentence(s, s, v) == 1.0
        assert rouge_sentence(s, ["x", "y"], v) == 0.0
    assert rouge_x([s, ["x"]], [s, ["y"]], 1) == 0.5
    with pytest.raises(ValueError):
        rouge_sentence(s, [], "1")


def test_knowledge_change_examples():
    assert knowledge_change_stats([[(1, 1), (1, 1), (3, 3), (3, 3), (5, 5)]]) == (2.0, 1.0)
    assert knowledge_change_stats([[(2, 4)]]) == (0.0, 3.0)
    # ungrounded turns neither change nor break runs
    assert knowledge_change_stats([[(1, 1), (0, 0), (1, 1), None, (2, 3)]]) == (1.0, 4 / 3)
    assert knowledge_change_stats([[(1, 1), (2, 2)], [(1, 1)]]) == (0.5, 1.0)


# ---- properties ----

tokens = st.lists(st.sampled_from("abcdef"), max_size=8)


@given(tokens, tokens)
def test_token_f1_symmetric(a, b):
    assert token_f1(a, b) == token_f1(b, a)


@given(st.tuples(st.integers(0, 9), st.integers(0, 9)), st.tuples(st.integers(0, 9), st.integers(0, 9)))
def test_exact_match_symmetric(a, b):
    assert exact_match(a, b) == exact_match(b, a)


@given(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8))
def test_self_comparison_is_one(s):
    for v in ("1", "L"):
        assert rouge_sentence(s, s, v) == 1.0
    assert abs(bleu_x([s], [s], 1) - 1.0) < 1e-12


@given(st.lists(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)).map(lambda t: (min(t), max(t))),
                         max_size=6), min_size=1, max_size=4),
       st.permutations(range(1, 6)))
def test_metrics_invariant_under_factoid_relabeling(dialogues, perm):
    # relabeling must keep spans contiguous, so compare width-1 spans
    width_one = [[(s, s) for s, _ in d] for d in dialogues]
    relabel = {0: 0, **{i + 1: p for i, p in enumerate(perm)}}
    moved = [[(relabel[s], relabel[s]) for s, _ in d] for d in width_one]
    assert knowledge_change_stats(width_one) == knowledge_change_stats(moved)
    flat = [s for d in width_one for s in d]
    flat_m = [s for d in moved for s in d]
    if flat:
        rank = [[relabel[i] for i in range(6)] for _ in flat]
        assert [mrr_at_5(list(range(6)), {s[0]}) for s in flat] == \
               [mrr_at_5(r, {t[0]}) for r, t in zip(rank, flat_m)]
        assert [exact_match(a, b) for a, b in zip(flat, flat[::-1])] == \
               [exact_match(a, b) for a, b in zip(flat_m, flat_m[::-1])]


def test_report_ranges_and_canonical_json():
    r = build_report([(1, 1), (0, 0), (2, 3)], [(1, 1), (0, 0), (2, 2)], [[1, 2], [0, 1], [3, 2]],
                     [[1], [], [2]], [["a", "b"], ["c"], ["d", "e"]], [["a", "b"], ["c"], ["e"]],
                     ["d1", "d1", "d2"])
    assert r.em == 2 / 3 and r.n_rank_excluded == 1
    assert r.mrr_at_5 == 0.75 and r.recall_at_5 == 1.0
    assert r.knowledge_changes_per_dialogue == 0.0 and r.factoids_per_turn == 1.5
    for v in [r.em, r.token_f1, r.mrr_at_5, r.recall_at_5, r.rouge_1, r.rouge_2, r.rouge_l,
              *r.bleu.values()]:
        assert 0.0 <= v <= 1.0
    text = r.to_json()
    assert MetricsReport.from_dict(json.loads(text)).to_json() == text
