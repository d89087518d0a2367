"""Span fusion CNN and the response decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import BOS, EOS
from .nn import DecoderBlock, LayerNorm, Linear, ParamStore, RngStreams
from .tensor import Tensor

CNN_KERNELS = (3, 3, 3)


class SpanFusion:
    """Three conv+maxpool stages over the factoid axis, mean-pooled, projected to H.

    Channel plan 3H -> 2H -> H -> H; padded span positions are held at zero
    between stages so a batch of ragged spans matches unbatched evaluation.
    """

    def __init__(self, ps: ParamStore, hidden: int, kernels=CNN_KERNELS, prefix: str = "fusion"):
        chans = [3 * hidden, 2 * hidden, hidden, hidden]
        self.kernels = kernels
        self.convs = []
        for i, k in enumerate(kernels):
            w = ps.add(f"{prefix}.conv{i}.w", (k, chans[i], chans[i + 1]),
                       scale=1.0 / np.sqrt(k * chans[i]))
            b = ps.add(f"{prefix}.conv{i}.b", (chans[i + 1],), init="zeros")
            self.convs.append((w, b))
        self.proj = Linear(ps, f"{prefix}.proj", hidden, hidden)

    def __call__(self, span: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """span: (..., W, 3H) -> f: (..., H)."""
        width = span.shape[-2]
        if width < 1:
            raise ValueError("span must contain at least one factoid")
        if mask is None:
            mask = np.ones(span.shape[:-1], dtype=bool)
        m = np.asarray(mask, dtype=np.float64)[..., None]
        x = span * m
        for (w, b), k in zip(self.convs, self.kernels):
            x = T.relu(T.conv1d(x, w, b)) * m
            x = T.maxpool1d(x, k) * m
        pooled = x.sum(axis=-2) * (1.0 / m.sum(axis=-2))
        return self.proj(pooled)


@dataclass
class DecodeState:
    tokens: list[int]
    hidden: np.ndarray
    fusion: np.ndarray
    memory: np.ndarray  # (W, H) projected span columns
    memory_mask: np.ndarray
    max_len: int = 50
    finished: bool = field(default=False)


class ResponseDecoder:
    def __init__(self, ps: ParamStore, token_table: Tensor, hidden: int, n_layers: int,
                 n_heads: int, max_decode_len: int, dropout: float, prefix: str = "decoder",
                 bos: int = BOS, eos: int = EOS):
        self.table = token_table
        self.bos, self.eos = bos, eos
        self.hidden = hidden
        self.max_decode_len = max_decode_len
        self.memory_proj = Linear(ps, f"{prefix}.memory_proj", 3 * hidden, hidden)
        self.pos = ps.add(f"{prefix}.pos", (max_decode_len + 1, hidden), scale=0.1)
        self.blocks = [DecoderBlock(ps, f"{prefix}.block{i}", hidden, n_heads, dropout)
                       for i in range(n_layers)]
        self.ln = LayerNorm(ps, f"{prefix}.ln", hidden)
        self.W_v = ps.add(f"{prefix}.W_v", (hidden, hidden))
        self.b_v = ps.add(f"{prefix}.b_v", (), init="zeros")
        self.p = dropout

    def memory(self, span: Tensor) -> Tensor:
        return self.memory_proj(span)

    def hidden_states(self, inputs: np.ndarray, fusion: Tensor, memory: Tensor,
                      memory_mask: np.ndarray, input_mask: np.ndarray | None = None,
                      rngs: RngStreams | None = None, training: bool = False) -> Tensor:
        """inputs: (B, L) ids of w_{t-1}; fusion (B, H); memory (B, W, H) -> (B, L, H)."""
        B, L = inputs.shape
        if L > self.max_decode_len + 1:
            raise ValueError(f"decoder input length {L} exceeds {self.max_decode_len + 1}")
        x = T.embedding(self.table, inputs) + self.pos[:L]
        x = x + fusion.reshape(B, 1, self.hidden)
        x = T.dropout(x, self.p, rngs and rngs.get("decoder.input"), training)
        causal = np.tril(np.ones((L, L), dtype=bool))
        if input_mask is not None:
            causal = causal[None, :, :] & np.asarray(input_mask, bool)[:, None, :]
            causal |= np.eye(L, dtype=bool)[None]
            self_mask = causal[:, None, :, :]
        else:
            self_mask = causal[None, None]
        mem_mask = np.asarray(memory_mask, dtype=bool)[:, None, None, :]
        for blk in self.blocks:
            x = blk(x, self_mask, memory, mem_mask, rngs, training)
        return self.ln(x)

    def logits(self, h: Tensor) -> Tensor:
        """V W_v h_t + b_v for every position: (..., H) -> (..., |V|)."""
        return (h @ self.W_v.T) @ self.table.T + self.b_v

    def distribution(self, h: Tensor) -> Tensor:
        return T.softmax(self.logits(h), axis=-1)

    # -- inference -----------------------------------------------------------
    def init_state(self, fusion: np.ndarray, memory: np.ndarray, memory_mask=None,
                   max_len: int | None = None) -> DecodeState:
        mm = np.ones(memory.shape[0], dtype=bool) if memory_mask is None else np.asarray(memory_mask)
        return DecodeState([], np.array(fusion, copy=True), np.array(fusion, copy=True),
                           np.asarray(memory), mm, max_len or self.max_decode_len)

    def decode_step(self, prev_token: int, state: DecodeState) -> tuple[np.ndarray, np.ndarray]:
        """Feed w_{t-1}; returns (h_t, p_v). ``state.tokens`` holds every id fed so far."""
        if len(state.tokens) >= state.max_len:
            raise RuntimeError("decode state exhausted: max_decode_len reached")
        state.tokens.append(int(prev_token))
        ids = np.array([state.tokens])
        h = self.hidden_states(ids, T.as_tensor(state.fusion[None]), T.as_tensor(state.memory[None]),
                               state.memory_mask[None])
        h_t = h.data[0, -1]
        p = self.distribution(T.as_tensor(h_t)).data
        state.hidden = h_t
        return h_t, p

    def greedy(self, fusion: np.ndarray, memory: np.ndarray, memory_mask: np.ndarray,
               max_len: int | None = None) -> list[list[int]]:
        """Batched greedy decoding; argmax ties resolve to the smallest token id."""
        max_len = min(max_len or self.max_decode_len, self.max_decode_len)
        B = fusion.shape[0]
        seqs = np.full((B, 1), self.bos, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        out: list[list[int]] = [[] for _ in range(B)]
        f, mem = T.as_tensor(fusion), T.as_tensor(memory)
        for _ in range(max_len):
            h = self.hidden_states(seqs, f, mem, memory_mask)
            logits = self.logits(T.as_tensor(h.data[:, -1])).data
            nxt = logits.argmax(axis=-1)
            for b in np.flatnonzero(~done):
                if nxt[b] == self.eos:
                    done[b] = True
                else:
                    out[b].append(int(nxt[b]))
            if done.all():
                break
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
        return out

    def sequence_logprob(self, fusion: np.ndarray, memory: np.ndarray, memory_mask: np.ndarray,
                         tokens: list[int]) -> float:
        """Summed log-probability of ``tokens`` (caller includes EOS if finished)."""
        ids = np.array([[self.bos] + tokens[:-1]]) if tokens else np.array([[self.bos]])
        h = self.hidden_states(ids, T.as_tensor(fusion[None]), T.as_tensor(memory[None]),
                               memory_mask[None])
        lp = T.log_softmax(self.logits(h)).data[0]
        return float(sum(lp[i, t] for i, t in enumerate(tokens)))

    def beam(self, fusion: np.ndarray, memory: np.ndarray, memory_mask: np.ndarray, k: int,
             max_len: int | None = None) -> list[int]:
        """Beam search for one example; finished hypotheses ranked by mean token log-prob.

        The greedy hypothesis is added to the final pool.
        """
        max_len = min(max_len or self.max_decode_len, self.max_decode_len)
        beams: list[tuple[list[int], float]] = [([], 0.0)]
        finished: list[tuple[list[int], float]] = []
        f = T.as_tensor(fusion[None])
        mem = T.as_tensor(memory[None])
        mm = memory_mask[None]
        for step in range(max_len):
            cands = []
            for toks, score in beams:
                ids = np.array([[self.bos] + toks])
                h = self.hidden_states(ids, f, mem, mm)
                lp = T.log_softmax(self.logits(T.as_tensor(h.data[0, -1]))).data
                for t in np.argsort(-lp, kind="stable")[:k]:
                    cands.append((toks + [int(t)], score + float(lp[t])))
            cands.sort(key=lambda c: -c[1])
            beams = []
            for toks, score in cands:
                if toks[-1] == self.eos:
                    finished.append((toks, score))
                else:
                    beams.append((toks, score))
                if len(beams) == k:
                    break
            if not beams or len(finished) >= k:
                break
        # the greedy path competes too, so beam never scores below greedy
        greedy = self.greedy(fusion[None], memory[None], memory_mask[None], max_len)[0]
        if len(greedy) < max_len:
            greedy = greedy + [self.eos]
        capped = [b for b in beams if len(b[0]) == max_len]
        pool = finished + capped + [(greedy, self.sequence_logprob(fusion, memory, memory_mask, greedy))]
        best = max(pool, key=lambda c: (c[1] / len(c[0]), -len(c[0])))
        toks = best[0]
        return toks[:-1] if toks and toks[-1] == self.eos else toks
