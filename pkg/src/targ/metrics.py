"""Selection and generation metrics, plus knowledge-change statistics."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

BLEU_EPSILON = 1e-9


def exact_match(pred: tuple[int, int], gold: tuple[int, int]) -> int:
    return int(tuple(pred) == tuple(gold))


def token_f1(pred: Sequence[str], gold: Sequence[str]) -> float:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / len(pred), overlap / len(gold)
    return 2 * p * r / (p + r)


def mrr_at_5(ranking: Sequence[int], gold: set[int] | Sequence[int]) -> float | None:
    """Reciprocal rank of the first gold factoid in the top 5; None for an empty gold set."""
    gold = set(gold)
    if not gold:
        return None
    for rank, f in enumerate(ranking[:5], start=1):
        if f in gold:
            return 1.0 / rank
    return 0.0


def recall_at_5(ranking: Sequence[int], gold: set[int] | Sequence[int]) -> float | None:
    gold = set(gold)
    if not gold:
        return None
    return len(gold & set(ranking[:5])) / len(gold)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_x(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]], X: int,
           smooth: bool = True) -> float:
    """Corpus BLEU with clipped n-gram precision, uniform weights over orders 1..X.

    With ``smooth`` a zero precision is replaced by ``BLEU_EPSILON``; without it
    any zero precision gives 0.
    """
    if X not in (1, 2, 3, 4):
        raise ValueError(f"BLEU order must be 1..4, got {X}")
    if not candidates:
        raise ValueError("empty candidate corpus")
    if len(candidates) != len(references):
        raise ValueError("candidate and reference counts differ")
    c_len = sum(len(c) for c in candidates)
    r_len = sum(len(r) for r in references)
    if c_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, X + 1):
        match = total = 0
        for c, r in zip(candidates, references):
            cc = ngrams(c, n)
            match += sum((cc & ngrams(r, n)).values())
            total += sum(cc.values())
        p = match / total if total else 0.0
        if p == 0.0:
            if not smooth:
                return 0.0
            p = BLEU_EPSILON
        log_p += math.log(p) / X
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_sentence(candidate: Sequence[str], reference: Sequence[str], variant: str | int) -> float:
    variant = str(variant).upper()
    if not reference:
        raise ValueError("empty reference")
    if variant == "L":
        return _f1(lcs_length(candidate, reference), len(candidate), len(reference))
    if variant not in ("1", "2"):
        raise ValueError(f"unknown ROUGE variant {variant!r}")
    n = int(variant)
    c, r = ngrams(candidate, n), ngrams(reference, n)
    return _f1(sum((c & r).values()), sum(c.values()), sum(r.values()))


def rouge_x(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
            variant: str | int) -> float:
    """Macro-average of per-sentence ROUGE F1."""
    if not candidates:
        raise ValueError("empty candidate corpus")
    scores = [rouge_sentence(c, r, variant) for c, r in zip(candidates, references, strict=True)]
    return sum(scores) / len(scores)


def knowledge_change_stats(dialogues: Sequence[Sequence[tuple[int, int] | None]]
                           ) -> tuple[float, float]:
    """(mean span changes per dialogue, mean factoids per grounded turn).

    Each dialogue is its system turns' spans in order; ``None`` or the
    pseudo-factoid span (0, 0) marks an ungrounded turn, which is skipped.
    """
    if not dialogues:
        return 0.0, 0.0
    changes, widths = [], []
    for spans in dialogues:
        grounded = [tuple(s) for s in spans if s is not None and tuple(s) != (0, 0)]
        changes.append(sum(a != b for a, b in zip(grounded, grounded[1:])))
        widths.extend(e - s + 1 for s, e in grounded)
    return sum(changes) / len(changes), (sum(widths) / len(widths) if widths else 0.0)


@dataclass
class MetricsReport:
    em: float = 0.0
    token_f1: float = 0.0
    mrr_at_5: float = 0.0
    recall_at_5: float = 0.0
    bleu: dict[str, float] = field(default_factory=dict)
    bleu_unsmoothed: dict[str, float] = field(default_factory=dict)
    rouge_1: float = 0.0
    rouge_2: float = 0.0
    rouge_l: float = 0.0
    knowledge_changes_per_dialogue: float = 0.0
    factoids_per_turn: float = 0.0
    n_examples: int = 0
    n_rank_excluded: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def build_report(pred_spans: Sequence[tuple[int, int]], gold_spans: Sequence[tuple[int, int]],
                 rankings: Sequence[Sequence[int]], gold_factoids: Sequence[Sequence[int]],
                 pred_tokens: Sequence[Sequence[str]], gold_tokens: Sequence[Sequence[str]],
                 dialogue_ids: Sequence[str]) -> MetricsReport:
    """Aggregate per-example predictions; the change statistics use the predicted spans."""
    n = len(pred_spans)
    if n == 0:
        raise ValueError("no examples to score")
    mrr, rec = [], []
    excluded = 0
    for r, g in zip(rankings, gold_factoids):
        m = mrr_at_5(r, g)
        if m is None:
            excluded += 1
            continue
        mrr.append(m)
        rec.append(recall_at_5(r, g))
    by_dialogue: dict[str, list] = {}
    for did, s in zip(dialogue_ids, pred_spans):
        by_dialogue.setdefault(did, []).append(tuple(int(x) for x in s))
    changes, per_turn = knowledge_change_stats(list(by_dialogue.values()))
    return MetricsReport(
        em=_mean([exact_match(p, g) for p, g in zip(pred_spans, gold_spans)]),
        token_f1=_mean([token_f1(p, g) for p, g in zip(pred_tokens, gold_tokens)]),
        mrr_at_5=_mean(mrr),
        recall_at_5=_mean(rec),
        bleu={str(x): bleu_x(pred_tokens, gold_tokens, x) for x in range(1, 5)},
        bleu_unsmoothed={str(x): bleu_x(pred_tokens, gold_tokens, x, smooth=False) for x in range(1, 5)},
        rouge_1=rouge_x(pred_tokens, gold_tokens, 1),
        rouge_2=rouge_x(pred_tokens, gold_tokens, 2),
        rouge_l=rouge_x(pred_tokens, gold_tokens, "L"),
        knowledge_changes_per_dialogue=changes,
        factoids_per_turn=per_turn,
        n_examples=n,
        n_rank_excluded=excluded,
    )
