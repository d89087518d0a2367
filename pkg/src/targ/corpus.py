"""Dialogue/factoid data model, JSON ingestion, tokenizer and vocabulary."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import jsonschema

from .io import atomic_write_text

USER, SYSTEM = "user", "system"
PSEUDO_TOPIC = "non-relevant"
PSEUDO_TEXT = "non-relevant"

RESERVED = ["[PAD]", "[CLS]", "[SEP]", "[USER]", "[SYS]", "[KLG]", "[BOS]", "[EOS]", "[UNK]"]
PAD, CLS, SEP, USER_ID, SYS_ID, KLG_ID, BOS, EOS, UNK = range(len(RESERVED))
MODE_IDS = {"user": USER_ID, "system": SYS_ID, "klg": KLG_ID}

MAX_SENTENCE_LENGTH = 50
MAX_TURNS = 15

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase; split on whitespace and punctuation (punctuation dropped)."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Factoid:
    id: str
    text: str
    topic: str
    doc_id: str
    position_in_doc: int
    explicit_topic: bool = field(default=True, repr=False, compare=False)


@dataclass
class Document:
    doc_id: str
    title: str
    factoids: list[Factoid]


@dataclass(frozen=True)
class Grounding:
    doc_id: str
    start: int
    end: int


@dataclass
class Turn:
    role: str
    text: str
    grounding: Grounding | None = None


@dataclass
class Dialogue:
    id: str
    turns: list[Turn]


class Corpus:
    """Documents plus dialogues.

    The knowledge sequence every turn selects from is the non-relevant
    pseudo-factoid at index 0 followed by all factoids in document order.
    """

    def __init__(self, documents: list[Document], dialogues: list[Dialogue]):
        self.documents = documents
        self.dialogues = dialogues
        self.provenance: dict[str, dict] = {}
        self._offsets: dict[str, int] = {}
        off = 1
        for d in documents:
            self._offsets[d.doc_id] = off
            off += len(d.factoids)
        self.n_knowledge = off
        self._validate()

    # -- knowledge indexing -------------------------------------------------
    def knowledge(self) -> list[tuple[str, str]]:
        """(text, topic) of every knowledge position, pseudo-factoid first."""
        items = [(PSEUDO_TEXT, PSEUDO_TOPIC)]
        for d in self.documents:
            items.extend((f.text, f.topic) for f in d.factoids)
        return items

    def factoid_at(self, index: int) -> Factoid | None:
        if index == 0:
            return None
        for d in self.documents:
            off = self._offsets[d.doc_id]
            if off <= index < off + len(d.factoids):
                return d.factoids[index - off]
        raise IndexError(index)

    def global_span(self, g: Grounding | None) -> tuple[int, int]:
        if g is None:
            return (0, 0)
        off = self._offsets[g.doc_id]
        return (off + g.start, off + g.end)

    def turn_topic(self, turn: Turn) -> str:
        if turn.grounding is None:
            return PSEUDO_TOPIC
        doc = self.document(turn.grounding.doc_id)
        return doc.factoids[turn.grounding.start].topic

    def document(self, doc_id: str) -> Document:
        for d in self.documents:
            if d.doc_id == doc_id:
                return d
        raise KeyError(doc_id)

    def span_text(self, s: int, e: int) -> str:
        items = self.knowledge()
        return " ".join(items[i][0] for i in range(s, e + 1))

    def subset(self, dialogue_ids: Iterable[str]) -> "Corpus":
        keep = set(dialogue_ids)
        c = Corpus(self.documents, [d for d in self.dialogues if d.id in keep])
        c.provenance = {k: v for k, v in self.provenance.items() if k in keep}
        return c

    # -- validation ---------------------------------------------------------
    def _validate(self) -> None:
        seen: set[str] = set()
        doc_ids: set[str] = set()
        for d in self.documents:
            if d.doc_id in doc_ids:
                raise CorpusError(f"duplicate doc_id {d.doc_id!r}")
            doc_ids.add(d.doc_id)
            for f in d.factoids:
                if f.id in seen:
                    raise CorpusError(f"duplicate factoid id {f.id!r}")
                seen.add(f.id)
                if not tokenize(f.text):
                    raise CorpusError(f"factoid {f.id!r} has empty text")
                if not f.topic.strip():
                    raise CorpusError(f"factoid {f.id!r} has empty topic")
        ids: set[str] = set()
        for dlg in self.dialogues:
            if dlg.id in ids:
                raise CorpusError(f"duplicate dialogue id {dlg.id!r}")
            ids.add(dlg.id)
            if not dlg.turns:
                raise CorpusError(f"dialogue {dlg.id!r} has no turns")
            for i, t in enumerate(dlg.turns):
                expected = USER if i % 2 == 0 else SYSTEM
                if t.role != expected:
                    raise CorpusError(
                        f"dialogue {dlg.id!r} turn {i}: expected role {expected}, got {t.role}")
                g = t.grounding
                if g is None:
                    continue
                if g.doc_id not in self._offsets:
                    raise CorpusError(f"dialogue {dlg.id!r} turn {i}: unknown doc_id {g.doc_id!r}")
                n = len(self.document(g.doc_id).factoids)
                if not 0 <= g.start <= g.end < n:
                    raise CorpusError(
                        f"dialogue {dlg.id!r} turn {i}: grounding ({g.start}, {g.end}) "
                        f"out of range for document {g.doc_id!r} with {n} factoids")

    # -- serialisation ------------------------------------------------------
    def to_json(self) -> dict:
        docs = []
        for d in self.documents:
            facts = []
            for f in d.factoids:
                item = {"id": f.id, "text": f.text}
                if f.explicit_topic:
                    item["topic"] = f.topic
                facts.append(item)
            docs.append({"doc_id": d.doc_id, "title": d.title, "factoids": facts})
        dlgs = []
        for dlg in self.dialogues:
            turns = []
            for t in dlg.turns:
                g = None if t.grounding is None else {
                    "doc_id": t.grounding.doc_id, "start": t.grounding.start, "end": t.grounding.end}
                turns.append({"role": t.role, "text": t.text, "grounding": g})
            dlgs.append({"id": dlg.id, "turns": turns})
        return {"documents": docs, "dialogues": dlgs}

    @classmethod
    def from_json(cls, obj: dict) -> "Corpus":
        try:
            jsonschema.validate(obj, CORPUS_SCHEMA)
        except jsonschema.ValidationError as e:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            raise CorpusError(f"schema violation at {where}: {e.message}") from None
        documents = []
        for d in obj["documents"]:
            facts = [
                Factoid(id=f["id"], text=f["text"], topic=f.get("topic", d["title"]),
                        doc_id=d["doc_id"], position_in_doc=i, explicit_topic="topic" in f)
                for i, f in enumerate(d["factoids"])
            ]
            documents.append(Document(d["doc_id"], d["title"], facts))
        dialogues = []
        for dlg in obj["dialogues"]:
            turns = []
            for t in dlg["turns"]:
                g = t.get("grounding")
                turns.append(Turn(t["role"], t["text"],
                                  None if g is None else Grounding(g["doc_id"], g["start"], g["end"])))
            dialogues.append(Dialogue(dlg["id"], turns))
        return cls(documents, dialogues)


CORPUS_SCHEMA = {
    "type": "object",
    "required": ["documents", "dialogues"],
    "additionalProperties": False,
    "properties": {
        "documents": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["doc_id", "title", "factoids"],
                "additionalProperties": False,
                "properties": {
                    "doc_id": {"type": "string"},
                    "title": {"type": "string", "minLength": 1},
                    "factoids": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["id", "text"],
                            "additionalProperties": False,
                            "properties": {
                                "id": {"type": "string"},
                                "text": {"type": "string", "minLength": 1},
                                "topic": {"type": "string", "minLength": 1},
                            },
                        },
                    },
                },
            },
        },
        "dialogues": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "turns"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "turns": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["role", "text"],
                            "additionalProperties": False,
                            "properties": {
                                "role": {"enum": [USER, SYSTEM]},
                                "text": {"type": "string"},
                                "grounding": {
                                    "oneOf": [
                                        {"type": "null"},
                                        {
                                            "type": "object",
                                            "required": ["doc_id", "start", "end"],
                                            "additionalProperties": False,
                                            "properties": {
                                                "doc_id": {"type": "string"},
                                                "start": {"type": "integer", "minimum": 0},
                                                "end": {"type": "integer", "minimum": 0},
                                            },
                                        },
                                    ]
                                },
                            },
                        },
                    },
                },
            },
        },
    },
}


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def load_corpus(path: str | Path) -> Corpus:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path}: invalid JSON: {e}") from None
    return Corpus.from_json(obj)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    atomic_write_text(path, dumps_canonical(corpus.to_json()))


class Vocabulary:
    """Token <-> id map with reserved ids first, then POS_0..POS_T, then corpus tokens."""

    def __init__(self, tokens: list[str] | None = None, max_turns: int = MAX_TURNS):
        self.max_turns = max_turns
        base = RESERVED + [f"[POS_{i}]" for i in range(max_turns + 1)]
        if tokens is None:
            tokens = base
        elif tokens[:len(base)] != base:
            raise CorpusError("vocabulary does not start with the reserved tokens")
        self.tokens: list[str] = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_corpus(cls, corpus: Corpus, max_turns: int = MAX_TURNS) -> "Vocabulary":
        v = cls(max_turns=max_turns)
        v.add_text(PSEUDO_TEXT)
        for d in corpus.documents:
            v.add_text(d.title)
            for f in d.factoids:
                v.add_text(f.topic)
                v.add_text(f.text)
        for dlg in corpus.dialogues:
            for t in dlg.turns:
                v.add_text(t.text)
        return v

    def add_text(self, text: str) -> None:
        for tok in tokenize(text):
            if tok not in self.index:
                self.index[tok] = len(self.tokens)
                self.tokens.append(tok)

    def __len__(self) -> int:
        return len(self.tokens)

    def pos_id(self, posit: int) -> int:
        if not 0 <= posit <= self.max_turns:
            raise ValueError(f"position {posit} outside 0..{self.max_turns}")
        return len(RESERVED) + posit

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.index.get(w, UNK) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def build_sequences(
    text: str | None,
    mode: str,
    posit: int,
    topic: str,
    vocab: Vocabulary,
    max_len: int = MAX_SENTENCE_LENGTH,
) -> tuple[list[int], list[int]]:
    """Semantic and topic token-id sequences for one utterance or factoid.

    X = [CLS] text [SEP] [MODE] [SEP]
    T = [CLS] topic [SEP] [MODE] [SEP] [POS_posit] [SEP]
    Text is truncated so each sequence fits ``max_len``. ``text=None`` is the
    reserved stand-in utterance used when a turn has no history; its only
    content token is [BOS].
    """
    if mode not in MODE_IDS:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "klg" and posit != 0:
        raise ValueError("factoids use position 0")
    m = MODE_IDS[mode]
    pos = vocab.pos_id(posit)
    words = [BOS] if text is None else vocab.encode(tokenize(text))[: max(max_len - 4, 0)]
    tw = vocab.encode(tokenize(topic))[: max(max_len - 6, 0)]
    x = [CLS, *words, SEP, m, SEP]
    t = [CLS, *tw, SEP, m, SEP, pos, SEP]
    return x, t


@dataclass
class Example:
    """One system turn to predict: history, gold span and gold response."""

    dialogue_id: str
    turn_index: int
    history: list[tuple[str | None, str, int, str]]  # (text, mode, posit, topic)
    gold_span: tuple[int, int]
    response: str


def iter_examples(corpus: Corpus, max_turns: int = MAX_TURNS) -> list[Example]:
    out = []
    for dlg in corpus.dialogues:
        for i, turn in enumerate(dlg.turns):
            if turn.role != SYSTEM:
                continue
            window = dlg.turns[max(0, i - max_turns):i]
            if window:
                hist = [(t.text, t.role, j + 1, corpus.turn_topic(t)) for j, t in enumerate(window)]
            else:
                hist = [(None, USER, 1, PSEUDO_TOPIC)]
            out.append(Example(dlg.id, i, hist, corpus.global_span(turn.grounding), turn.text))
    return out
