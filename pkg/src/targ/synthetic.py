"""Seeded generator of topic-shift dialogues over templated factoids.

Every topic owns a disjoint pool of invented words. A factoid is a template
filled with its own keywords, a user turn mentions some of those keywords,
and the gold system turn restates the grounded factoid(s). Dialogues walk
between topics, switching with probability ``shift_prob`` at each grounded
exchange.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (SYSTEM, USER, Corpus, Dialogue, Document, Factoid, Grounding, Turn,
                     tokenize)

FACTOID_TEMPLATES = [
    "the {0} covers {1} and {2}",
    "you need {0} to get {1} with {2}",
    "{0} and {1} are handled by {2}",
    "apply for {0} before {1} using {2}",
    "every {0} requires {1} plus {2}",
]
QUESTION_TEMPLATES = [
    "what about {0} {1}",
    "tell me about {0} {1}",
    "how do i handle {0} {1}",
    "i have a question on {0} {1}",
]
MULTI_QUESTION_TEMPLATES = [
    "what about {0} and {1}",
    "tell me about {0} and also {1}",
]
OPENERS = ["sure", "yes", "okay so"]
CHITCHAT_USER = ["thanks", "thank you so much", "ok great", "that is helpful"]
CHITCHAT_SYSTEM = "you are welcome is there anything else"

TEMPLATE_WORDS = frozenset(
    w for text in (FACTOID_TEMPLATES + QUESTION_TEMPLATES + MULTI_QUESTION_TEMPLATES
                   + OPENERS + CHITCHAT_USER + [CHITCHAT_SYSTEM, "and also non relevant"])
    for w in tokenize(text.replace("{", " ").replace("}", " ")) if not w.isdigit()
)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class GenerationError(ValueError):
    pass


@dataclass
class SyntheticConfig:
    topics: int = 6
    factoids_per_topic: int = 5
    n_dialogues: int = 500
    turns_per_dialogue: int = 5
    shift_prob: float = 0.4
    ungrounded_prob: float = 0.1
    multi_span_prob: float = 0.2
    keywords_per_factoid: int = 3
    ground_user_turns: bool = True
    seed: int = 7
    topic_pools: list[list[str]] | None = None

    def validate(self) -> None:
        for name in ("topics", "factoids_per_topic", "n_dialogues", "turns_per_dialogue"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.keywords_per_factoid < 3:
            raise ValueError("keywords_per_factoid must be >= 3")
        for name in ("shift_prob", "ungrounded_prob", "multi_span_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def _invent_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < n:
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(3))
        if w in taken or w in TEMPLATE_WORDS:
            continue
        taken.add(w)
        words.append(w)
    return words


def _pools(cfg: SyntheticConfig, rng: np.random.Generator) -> list[list[str]]:
    need = 1 + cfg.factoids_per_topic * cfg.keywords_per_factoid
    if cfg.topic_pools is None:
        taken: set[str] = set()
        return [_invent_words(rng, need, taken) for _ in range(cfg.topics)]
    pools = [list(p) for p in cfg.topic_pools]
    if len(pools) != cfg.topics:
        raise GenerationError(f"expected {cfg.topics} topic pools, got {len(pools)}")
    owner: dict[str, int] = {}
    for i, pool in enumerate(pools):
        if len(set(pool)) < need:
            raise GenerationError(f"topic pool {i} needs {need} distinct words")
        for w in pool:
            if w in TEMPLATE_WORDS:
                raise GenerationError(f"word {w!r} in pool {i} collides with template vocabulary")
            if owner.setdefault(w, i) != i:
                raise GenerationError(f"word {w!r} appears in topic pools {owner[w]} and {i}")
    return pools


def generate_synthetic(cfg: SyntheticConfig) -> Corpus:
    """Build a deterministic corpus; ``corpus.provenance`` records per-dialogue truth.

    provenance[dialogue_id] = {"knowledge_changes": int, "topics": [...],
    "spans": [(s, e) | None per system turn]} with spans in knowledge indices.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pools = _pools(cfg, rng)
    k = cfg.keywords_per_factoid

    documents: list[Document] = []
    keywords: list[list[list[str]]] = []
    for ti, pool in enumerate(pools):
        title = pool[0]
        doc_id = f"doc{ti}"
        facts, kws = [], []
        for fi in range(cfg.factoids_per_topic):
            words = pool[1 + fi * k:1 + (fi + 1) * k]
            tmpl = FACTOID_TEMPLATES[int(rng.integers(len(FACTOID_TEMPLATES)))]
            text = tmpl.format(*words[:3])
            if k > 3:
                text += " " + " ".join(words[3:])
            facts.append(Factoid(f"{doc_id}_f{fi}", text, title, doc_id, fi))
            kws.append(words)
        documents.append(Document(doc_id, title, facts))
        keywords.append(kws)

    offsets = np.cumsum([1] + [cfg.factoids_per_topic] * cfg.topics)
    dialogues: list[Dialogue] = []
    provenance: dict[str, dict] = {}
    for di in range(cfg.n_dialogues):
        did = f"dlg{di:05d}"
        turns: list[Turn] = []
        topic = int(rng.integers(cfg.topics))
        started = False
        prev_span = None
        changes = 0
        topics_seen: list[int] = []
        spans: list[tuple[int, int] | None] = []
        for _ in range(cfg.turns_per_dialogue):
            if rng.random() < cfg.ungrounded_prob:
                turns.append(Turn(USER, CHITCHAT_USER[int(rng.integers(len(CHITCHAT_USER)))]))
                turns.append(Turn(SYSTEM, CHITCHAT_SYSTEM))
                spans.append(None)
                continue
            if started and cfg.topics > 1 and rng.random() < cfg.shift_prob:
                topic = (topic + 1 + int(rng.integers(cfg.topics - 1))) % cfg.topics
            started = True
            start = int(rng.integers(cfg.factoids_per_topic))
            end = start
            if start + 1 < cfg.factoids_per_topic and rng.random() < cfg.multi_span_prob:
                end = start + 1
            kws = keywords[topic]
            if end == start:
                a, b = rng.permutation(kws[start])[:2]
                question = QUESTION_TEMPLATES[int(rng.integers(len(QUESTION_TEMPLATES)))].format(a, b)
            else:
                a = kws[start][int(rng.integers(k))]
                b = kws[end][int(rng.integers(k))]
                question = MULTI_QUESTION_TEMPLATES[
                    int(rng.integers(len(MULTI_QUESTION_TEMPLATES)))].format(a, b)
            facts = documents[topic].factoids
            answer = OPENERS[int(rng.integers(len(OPENERS)))] + " " + facts[start].text
            if end != start:
                answer += " and also " + facts[end].text
            g = Grounding(documents[topic].doc_id, start, end)
            turns.append(Turn(USER, question, g if cfg.ground_user_turns else None))
            turns.append(Turn(SYSTEM, answer, g))
            span = (int(offsets[topic] + start), int(offsets[topic] + end))
            if prev_span is not None and span != prev_span:
                changes += 1
            prev_span = span
            spans.append(span)
            topics_seen.append(topic)
        dialogues.append(Dialogue(did, turns))
        provenance[did] = {
            "knowledge_changes": changes,
            "topics": [documents[t].title for t in topics_seen],
            "spans": spans,
        }
    corpus = Corpus(documents, dialogues)
    corpus.provenance = provenance
    return corpus


def split_corpus(corpus: Corpus, n_dev: int) -> tuple[Corpus, Corpus]:
    """Last ``n_dev`` dialogues become the dev split; documents are shared."""
    ids = [d.id for d in corpus.dialogues]
    if not 0 <= n_dev < len(ids):
        raise ValueError(f"cannot hold out {n_dev} of {len(ids)} dialogues")
    cut = len(ids) - n_dev
    return corpus.subset(ids[:cut]), corpus.subset(ids[cut:])
