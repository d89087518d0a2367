"""The assembled topic-aware grounded dialogue model: encoding, attention, selection, generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionParameters, TopicAwareMatrix, topic_aware_matrix
from .config import TrainConfig
from .corpus import BOS, EOS, PAD, Corpus, Example, Vocabulary, \
    build_sequences, tokenize
from .encoder import BiLSTMEncoder, TransformerEncoder, pad_sequences
from .generator import ResponseDecoder, SpanFusion
from .nn import ParamStore, RngStreams
from .selector import SelectorParameters, decode_span, predict_span_distributions, rank_factoids
from .tensor import Tensor


@dataclass
class Batch:
    """Index arrays for a group of examples sharing one knowledge set.

    ``sequences`` holds every distinct token sequence once; the gather arrays
    point into its encoding.
    """

    examples: list[Example]
    sequences: list[list[int]]
    sem_u: np.ndarray  # (B, N) rows of sequences
    top_u: np.ndarray
    utt_mask: np.ndarray  # (B, N)
    sem_k: np.ndarray  # (M,)
    top_k: np.ndarray
    gold_span: np.ndarray  # (B, 2)
    dec_in: np.ndarray  # (B, L)
    dec_out: np.ndarray
    dec_mask: np.ndarray


@dataclass
class ForwardOutput:
    p_start: Tensor  # (B, M)
    p_end: Tensor
    matrix: TopicAwareMatrix
    gen_probs: Tensor | None  # (B, L) probability of each gold token


def span_gather(span: np.ndarray, max_width: int) -> tuple[np.ndarray, np.ndarray]:
    """(B, 2) inclusive spans -> (B, W) column indices and validity mask."""
    span = np.asarray(span, dtype=np.int64)
    width = span[:, 1] - span[:, 0] + 1
    if (width < 1).any():
        raise ValueError("span end before start")
    W = int(min(width.max(), max_width))
    offs = np.arange(W)[None, :]
    mask = offs < np.minimum(width, max_width)[:, None]
    idx = np.where(mask, span[:, :1] + offs, span[:, :1])
    return idx, mask


class TARGModel:
    def __init__(self, config: TrainConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        H = config.hidden
        ps = self.params = ParamStore(config.seed)
        self.table = ps.add("embedding", (len(vocab), H), scale=1.0 / np.sqrt(H))
        self.encoder = self._make_encoder("encoder")
        self.topic_encoder = self.encoder if config.shared_encoder else self._make_encoder("topic_encoder")
        self.attention = AttentionParameters.create(ps, H)
        self.selector = SelectorParameters.create(ps, H, config.max_factoids)
        self.fusion = SpanFusion(ps, H)
        self.decoder = ResponseDecoder(ps, self.table, H, config.dec_layers, config.n_heads,
                                       config.max_decode_len, config.dropout)
        self._knowledge_cache: tuple[int, list[list[int]], list[list[int]]] | None = None

    def _make_encoder(self, prefix: str):
        c = self.config
        if c.encoder_kind == "bilstm":
            return BiLSTMEncoder(self.params, self.table, c.hidden, c.max_len, c.dropout, prefix)
        return TransformerEncoder(self.params, self.table, c.hidden, c.n_layers, c.n_heads,
                                  c.max_len, c.dropout, prefix)

    # -- batching ------------------------------------------------------------
    def knowledge_sequences(self, corpus: Corpus) -> tuple[list[list[int]], list[list[int]]]:
        key = id(corpus)
        if self._knowledge_cache is None or self._knowledge_cache[0] != key:
            sem, top = [], []
            for text, topic in corpus.knowledge():
                x, t = build_sequences(text, "klg", 0, topic, self.vocab, self.config.max_len)
                sem.append(x)
                top.append(t)
            self._knowledge_cache = (key, sem, top)
        return self._knowledge_cache[1], self._knowledge_cache[2]

    def make_batch(self, examples: list[Example], corpus: Corpus) -> Batch:
        c = self.config
        seq_index: dict[tuple[int, ...], int] = {}
        seqs: list[list[int]] = []

        def idx(s: list[int]) -> int:
            k = tuple(s)
            if k not in seq_index:
                seq_index[k] = len(seqs)
                seqs.append(s)
            return seq_index[k]

        ksem, ktop = self.knowledge_sequences(corpus)
        if len(ksem) > c.max_factoids:
            raise ValueError(f"{len(ksem)} knowledge entries exceed max_factoids={c.max_factoids}")
        sem_k = np.array([idx(s) for s in ksem])
        top_k = np.array([idx(s) for s in ktop])
        B = len(examples)
        N = max(len(e.history) for e in examples)
        sem_u = np.zeros((B, N), dtype=np.int64)
        top_u = np.zeros((B, N), dtype=np.int64)
        mask = np.zeros((B, N), dtype=bool)
        for b, ex in enumerate(examples):
            for j, (text, mode, posit, topic) in enumerate(ex.history):
                x, t = build_sequences(text, mode, posit, topic, self.vocab, c.max_len)
                sem_u[b, j], top_u[b, j] = idx(x), idx(t)
                mask[b, j] = True
        targets = [self.vocab.encode(tokenize(e.response))[: c.max_decode_len - 1] + [EOS]
                   for e in examples]
        L = max(len(t) for t in targets)
        dec_in = np.full((B, L), PAD, dtype=np.int64)
        dec_out = np.full((B, L), PAD, dtype=np.int64)
        for b, t in enumerate(targets):
            dec_in[b, :len(t)] = [BOS] + t[:-1]
            dec_out[b, :len(t)] = t
        gold = np.array([e.gold_span for e in examples], dtype=np.int64).reshape(B, 2)
        return Batch(examples, seqs, sem_u, top_u, mask, sem_k, top_k, gold,
                     dec_in, dec_out, dec_out != PAD)

    # -- forward -------------------------------------------------------------
    def _encode_all(self, batch: Batch, rngs, training) -> tuple[Tensor, Tensor]:
        ids = pad_sequences(batch.sequences)
        sem = self.encoder(ids, rngs, training)
        if self.topic_encoder is self.encoder:
            return sem, sem
        return sem, self.topic_encoder(ids, rngs, training)

    def topic_matrix(self, batch: Batch, rngs: RngStreams | None = None,
                     training: bool = False) -> TopicAwareMatrix:
        c = self.config
        sem, top = self._encode_all(batch, rngs, training)
        S_u, T_u = T.embedding(sem, batch.sem_u), T.embedding(top, batch.top_u)
        S_k, T_k = T.embedding(sem, batch.sem_k), T.embedding(top, batch.top_k)
        return topic_aware_matrix(S_u, T_u, S_k, T_k, self.attention, batch.utt_mask,
                                  c.ablation, c.feature_interaction, c.strict_exp)

    def span_memory(self, columns: Tensor, spans: np.ndarray) -> tuple[Tensor, Tensor, np.ndarray]:
        """Fusion vector f (B, H), projected span memory (B, W, H) and its mask."""
        idx, mask = span_gather(spans, self.config.max_span)
        rows = np.broadcast_to(np.arange(idx.shape[0])[:, None], idx.shape)
        span = columns[rows, idx]
        return self.fusion(span, mask), self.decoder.memory(span), mask

    def forward(self, batch: Batch, rngs: RngStreams | None = None, training: bool = False,
                generate_loss: bool = True) -> ForwardOutput:
        mat = self.topic_matrix(batch, rngs, training)
        p_s, p_e = predict_span_distributions(mat.columns, self.selector)
        probs = None
        if generate_loss:
            f, mem, mmask = self.span_memory(mat.columns, batch.gold_span)
            h = self.decoder.hidden_states(batch.dec_in, f, mem, mmask, rngs=rngs, training=training)
            p_v = self.decoder.distribution(h)
            probs = T.take_along_last(p_v, batch.dec_out[..., None]).reshape(batch.dec_out.shape)
        return ForwardOutput(p_s, p_e, mat, probs)

    # -- inference -----------------------------------------------------------
    def predict(self, batch: Batch, max_decode_len: int | None = None, beam: int = 1):
        """Decoded spans, factoid rankings and generated token ids for each example."""
        c = self.config
        out = self.forward(batch, generate_loss=False)
        ps, pe = out.p_start.data, out.p_end.data
        spans = np.array([decode_span(ps[b], pe[b], c.max_span) for b in range(len(ps))])
        ranks = [rank_factoids(ps[b], pe[b], c.max_span) for b in range(len(ps))]
        f, mem, mmask = self.span_memory(out.matrix.columns, spans)
        if beam <= 1:
            tokens = self.decoder.greedy(f.data, mem.data, mmask, max_decode_len)
        else:
            tokens = [self.decoder.beam(f.data[b], mem.data[b], mmask[b], beam, max_decode_len)
                      for b in range(len(spans))]
        return spans, ranks, tokens, out
