"""Utterance/factoid encoders producing the CLS-state embedding of a token sequence."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .corpus import PAD
from .nn import EncoderBlock, LayerNorm, LSTMCell, ParamStore, RngStreams
from .tensor import Tensor


def pad_sequences(seqs: list[list[int]]) -> np.ndarray:
    L = max(len(s) for s in seqs)
    out = np.full((len(seqs), L), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


class TransformerEncoder:
    def __init__(self, ps: ParamStore, token_table: Tensor, hidden: int, n_layers: int,
                 n_heads: int, max_len: int, dropout: float, prefix: str = "encoder"):
        self.table = token_table
        self.prefix = prefix
        self.max_len = max_len
        self.pos = ps.add(f"{prefix}.pos", (max_len, hidden), scale=0.1)
        self.blocks = [EncoderBlock(ps, f"{prefix}.block{i}", hidden, n_heads, dropout)
                       for i in range(n_layers)]
        self.ln = LayerNorm(ps, f"{prefix}.ln", hidden) if n_layers else None
        self.p = dropout

    def __call__(self, ids: np.ndarray, rngs: RngStreams | None = None,
                 training: bool = False) -> Tensor:
        """ids: (B, L) padded token ids -> (B, H) final state at the CLS position."""
        ids = np.asarray(ids, dtype=np.int64)
        B, L = ids.shape
        if L < 3 or L > self.max_len:
            raise ValueError(f"sequence length {L} outside [3, {self.max_len}]")
        x = T.embedding(self.table, ids) + self.pos[:L]
        x = T.dropout(x, self.p, rngs and rngs.get(f"{self.prefix}.input"), training)
        key_mask = (ids != PAD)[:, None, None, :]
        for blk in self.blocks:
            x = blk(x, key_mask, rngs, training)
        if self.ln is not None:
            x = self.ln(x)
        return x[:, 0]


class BiLSTMEncoder:
    """Bidirectional LSTM; the summary is [last forward state ; first backward state]."""

    def __init__(self, ps: ParamStore, token_table: Tensor, hidden: int, max_len: int,
                 dropout: float, prefix: str = "encoder"):
        if hidden % 2:
            raise ValueError("BiLSTM encoder needs an even hidden size")
        self.table = token_table
        self.prefix = prefix
        self.max_len = max_len
        self.half = hidden // 2
        self.fwd = LSTMCell(ps, f"{prefix}.fwd", hidden, self.half)
        self.bwd = LSTMCell(ps, f"{prefix}.bwd", hidden, self.half)
        self.p = dropout

    def __call__(self, ids: np.ndarray, rngs: RngStreams | None = None,
                 training: bool = False) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        B, L = ids.shape
        if L < 3 or L > self.max_len:
            raise ValueError(f"sequence length {L} outside [3, {self.max_len}]")
        x = T.embedding(self.table, ids)
        x = T.dropout(x, self.p, rngs and rngs.get(f"{self.prefix}.input"), training)
        valid = ids != PAD
        zero = T.as_tensor(np.zeros((B, self.half)))

        def run(cell, order):
            h, c = zero, zero
            for t in order:
                h2, c2 = cell(x[:, t], h, c)
                m = valid[:, t:t + 1]
                h, c = T.where(m, h2, h), T.where(m, c2, c)
            return h

        hf = run(self.fwd, range(L))
        hb = run(self.bwd, range(L - 1, -1, -1))
        return T.concat([hf, hb], axis=-1)


def encode(token_ids, encoder, training: bool = False, rngs: RngStreams | None = None) -> Tensor:
    """H-vector for a single token-id sequence."""
    ids = np.asarray(token_ids, dtype=np.int64)[None]
    if ids.size and ids.max() >= encoder.table.shape[0]:
        raise IndexError(f"token id {ids.max()} outside vocabulary of {encoder.table.shape[0]}")
    return encoder(ids, rngs, training)[0]
