"""Span selection over the concatenated knowledge sequence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import ParamStore
from .tensor import DimensionError, Tensor


@dataclass
class SelectorParameters:
    W_s: Tensor  # (3H,)
    b_s: Tensor  # (max_factoids,)
    W_e: Tensor
    b_e: Tensor

    @classmethod
    def create(cls, ps: ParamStore, hidden: int, max_factoids: int,
               prefix: str = "selector") -> "SelectorParameters":
        s = 1.0 / np.sqrt(3 * hidden)
        return cls(
            W_s=ps.add(f"{prefix}.W_s", (3 * hidden,), scale=s),
            b_s=ps.add(f"{prefix}.b_s", (max_factoids,), init="zeros"),
            W_e=ps.add(f"{prefix}.W_e", (3 * hidden,), scale=s),
            b_e=ps.add(f"{prefix}.b_e", (max_factoids,), init="zeros"),
        )

    def tensors(self) -> list[Tensor]:
        return [self.W_s, self.b_s, self.W_e, self.b_e]


@dataclass
class SpanPrediction:
    p_start: np.ndarray
    p_end: np.ndarray
    decoded: tuple[int, int]
    score: float


def predict_span_distributions(columns: Tensor, params: SelectorParameters,
                               mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Start/end distributions over the M knowledge positions.

    ``columns`` holds the topic-aware vectors k_i row-wise, shape (..., M, 3H).
    """
    d = params.W_s.shape[0]
    if columns.shape[-1] != d:
        raise DimensionError(f"K column size {columns.shape[-1]} != {d}")
    M = columns.shape[-2]
    cap = params.b_s.shape[0]
    if M > cap:
        raise DimensionError(f"{M} factoids exceed the configured maximum {cap}")
    start = columns @ params.W_s + params.b_s[:M]
    end = columns @ params.W_e + params.b_e[:M]
    return T.softmax(start, -1, mask), T.softmax(end, -1, mask)


def _span_table(p_start: np.ndarray, p_end: np.ndarray, max_span: int,
                mask: np.ndarray | None) -> np.ndarray:
    ps = np.asarray(p_start, dtype=np.float64)
    pe = np.asarray(p_end, dtype=np.float64)
    M = ps.shape[0]
    s, e = np.indices((M, M))
    allowed = (s <= e) & (e - s < max_span)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        allowed &= mask[:, None] & mask[None, :]
    return np.where(allowed, np.outer(ps, pe), -1.0)


def decode_span(p_start, p_end, max_span: int = 5, mask: np.ndarray | None = None
                ) -> tuple[int, int]:
    """argmax of p_start[s]*p_end[e] over s <= e < s + max_span; ties -> smaller s, then e."""
    if max_span < 1:
        raise ValueError("max_span must be >= 1")
    table = _span_table(p_start, p_end, max_span, mask)
    flat = int(np.argmax(table))  # row-major, first maximum wins
    s, e = divmod(flat, table.shape[1])
    return s, e


def span_score(p_start, p_end, span: tuple[int, int]) -> float:
    return float(np.asarray(p_start)[span[0]] * np.asarray(p_end)[span[1]])


def rank_factoids(p_start, p_end, max_span: int = 5, mask: np.ndarray | None = None
                  ) -> list[tuple[int, float]]:
    """Factoids (pseudo-factoid 0 excluded) by total probability of spans covering them."""
    table = np.clip(_span_table(p_start, p_end, max_span, mask), 0.0, None)
    M = table.shape[0]
    # score[m] = sum_{s <= m} sum_{e >= m} table[s, e]
    row_tail = np.cumsum(table[:, ::-1], axis=1)[:, ::-1]  # row_tail[s, m] = sum_{e>=m}
    scores = np.cumsum(row_tail, axis=0)[np.arange(M), np.arange(M)]
    order = [m for m in np.argsort(-scores, kind="stable") if m != 0]
    if mask is not None:
        order = [m for m in order if mask[m]]
    return [(int(m), float(scores[m])) for m in order]


def predict_span(p_start, p_end, max_span: int = 5, mask: np.ndarray | None = None
                 ) -> SpanPrediction:
    ps, pe = np.asarray(p_start), np.asarray(p_end)
    span = decode_span(ps, pe, max_span, mask)
    return SpanPrediction(ps, pe, span, span_score(ps, pe, span))
