"""Topic-aware attention over dialogue history and the topic-aware pair matrix K.

Batched shapes used throughout (leading batch axes optional):

    T_u, S_u : (..., N, H)   utterance topic / semantic embeddings
    T_k, S_k : (..., M, H)   factoid topic / semantic embeddings
    weights  : (..., M, N)   one distribution over utterances per factoid
    F        : (..., M, N, H)
    columns  : (..., M, 3H)  k_i stored row-wise; ``TopicAwareMatrix.K`` is (3H, M)
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .io import atomic_write_text
from .nn import ParamStore
from .tensor import DimensionError, Tensor

MECHANISMS = ("dot", "bilinear", "outer")
ABLATIONS = ("full", "no_topic_attention", "dot_only", "bilinear_only", "outer_only",
             "bilstm_encoder")
VARIANTS = ("elementwise", "literal")


@dataclass
class AttentionParameters:
    w_d: Tensor  # (2H,)
    W_b: Tensor  # (H, H)
    w_o: Tensor  # (H,)
    W_f: Tensor  # (H, H)
    b_f: Tensor  # scalar
    v_f: Tensor  # (H,)

    @classmethod
    def create(cls, ps: ParamStore, hidden: int, prefix: str = "attention") -> "AttentionParameters":
        return cls(
            w_d=ps.add(f"{prefix}.w_d", (2 * hidden,), scale=1.0 / np.sqrt(hidden)),
            W_b=ps.add(f"{prefix}.W_b", (hidden, hidden)),
            w_o=ps.add(f"{prefix}.w_o", (hidden,), scale=1.0 / np.sqrt(hidden)),
            W_f=ps.add(f"{prefix}.W_f", (hidden, hidden)),
            b_f=ps.add(f"{prefix}.b_f", (), init="zeros"),
            v_f=ps.add(f"{prefix}.v_f", (hidden,), scale=1.0),
        )

    def attention_tensors(self) -> list[Tensor]:
        return [self.w_d, self.W_b, self.w_o]


def _check_hidden(T_u: Tensor, T_k: Tensor) -> int:
    h = T_u.shape[-1]
    if T_k.shape[-1] != h:
        raise DimensionError(f"utterance width {T_u.shape} does not match factoid width {T_k.shape}")
    return h


def dot_scores(T_u: Tensor, T_k: Tensor, w_d: Tensor) -> Tensor:
    """score[i, j] = [t_u^j ; t_k^i] . w_d"""
    h = _check_hidden(T_u, T_k)
    if w_d.shape != (2 * h,):
        raise DimensionError(f"w_d must have shape ({2 * h},), got {w_d.shape}")
    su = T_u @ w_d[:h]  # (..., N)
    sk = T_k @ w_d[h:]  # (..., M)
    return su.reshape(su.shape[:-1] + (1, su.shape[-1])) + sk.reshape(sk.shape + (1,))


def bilinear_scores(T_u: Tensor, T_k: Tensor, W_b: Tensor) -> Tensor:
    """score[i, j] = t_u^j W_b t_k^i"""
    h = _check_hidden(T_u, T_k)
    if W_b.shape != (h, h):
        raise DimensionError(f"W_b must have shape ({h}, {h}), got {W_b.shape}")
    return T_k @ (T_u @ W_b).swapaxes(-1, -2)


def outer_scores(T_u: Tensor, T_k: Tensor, w_o: Tensor) -> Tensor:
    """score[i, j] = w_o . (t_u^j * t_k^i), the diagonal form of the outer-product score."""
    h = _check_hidden(T_u, T_k)
    if w_o.shape != (h,):
        raise DimensionError(f"w_o must have shape ({h},), got {w_o.shape}")
    return T_k @ (T_u * w_o).swapaxes(-1, -2)


def normalize(scores: Tensor, mask: np.ndarray | None = None, strict_exp: bool = False) -> Tensor:
    """Softmax over utterances (last axis); masked utterances get weight 0."""
    if strict_exp:
        scores = T.exp(scores)
    return T.softmax(scores, axis=-1, mask=mask)


def _single(fn, T_u, t_k, param, strict_exp):
    if T_u.shape[0] < 1:
        raise DimensionError("attention needs at least one utterance")
    s = fn(T_u, t_k.reshape(1, -1), param)
    return normalize(s, strict_exp=strict_exp).reshape(-1)


def dot_attention(T_u: Tensor, t_k: Tensor, w_d: Tensor, strict_exp: bool = False) -> Tensor:
    return _single(dot_scores, T_u, t_k, w_d, strict_exp)


def bilinear_attention(T_u: Tensor, t_k: Tensor, W_b: Tensor, strict_exp: bool = False) -> Tensor:
    return _single(bilinear_scores, T_u, t_k, W_b, strict_exp)


def outer_attention(T_u: Tensor, t_k: Tensor, w_o: Tensor, strict_exp: bool = False) -> Tensor:
    return _single(outer_scores, T_u, t_k, w_o, strict_exp)


def uniform_weights(mask: np.ndarray, n_factoids: int) -> Tensor:
    """Equal weight on every valid utterance, broadcast to (..., M, N)."""
    m = np.asarray(mask, dtype=np.float64)
    w = m / m.sum(axis=-1, keepdims=True)
    w = np.broadcast_to(w[..., None, :], w.shape[:-1] + (n_factoids, w.shape[-1]))
    return T.as_tensor(np.ascontiguousarray(w))


def topic_attention(T_u: Tensor, T_k: Tensor, params: AttentionParameters,
                    mask: np.ndarray | None = None, ablation: str = "full",
                    strict_exp: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """The three weight tensors (A_d, A_b, A_o), each (..., M, N).

    Ablations: ``no_topic_attention`` replaces all three with uniform weights;
    ``<mech>_only`` uses that one mechanism in all three slots.
    """
    if mask is None:
        mask = np.ones(T_u.shape[:-1], dtype=bool)
    mk = np.asarray(mask, dtype=bool)[..., None, :]
    M = T_k.shape[-2]
    if ablation == "no_topic_attention":
        u = uniform_weights(mask, M)
        return u, u, u
    wanted = {
        "dot_only": ("dot",), "bilinear_only": ("bilinear",), "outer_only": ("outer",),
    }.get(ablation, MECHANISMS)
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    out = {}
    if "dot" in wanted:
        out["dot"] = normalize(dot_scores(T_u, T_k, params.w_d), mk, strict_exp)
    if "bilinear" in wanted:
        out["bilinear"] = normalize(bilinear_scores(T_u, T_k, params.W_b), mk, strict_exp)
    if "outer" in wanted:
        out["outer"] = normalize(outer_scores(T_u, T_k, params.w_o), mk, strict_exp)
    if len(wanted) == 1:
        a = out[wanted[0]]
        return a, a, a
    return out["dot"], out["bilinear"], out["outer"]


def feature_interaction(S_u: Tensor, S_k: Tensor, W_f: Tensor, b_f: Tensor, v_f: Tensor,
                        variant: str = "elementwise") -> Tensor:
    """Utterance/factoid interaction features F, shape (..., M, N, H).

    literal:     F[i, j] = tanh(s_u^j W_f s_k^i + b_f) * v_f
    elementwise: F[i, j] = v_f * tanh((s_u^j W_f) * s_k^i + b_f)
    A single factoid ``S_k`` of shape (H,) gives (N, H).
    """
    single = S_k.ndim == 1
    if single:
        S_k = S_k.reshape(1, -1)
    _check_hidden(S_u, S_k)
    proj = S_u @ W_f  # (..., N, H)
    if variant == "elementwise":
        lead = proj.shape[:-2]
        p = proj.reshape(lead + (1,) + proj.shape[-2:])
        k = S_k.reshape(S_k.shape[:-1] + (1, S_k.shape[-1]))
        F = v_f * T.tanh(p * k + b_f)
    elif variant == "literal":
        g = T.tanh(S_k @ proj.swapaxes(-1, -2) + b_f)  # (..., M, N)
        F = g.reshape(g.shape + (1,)) * v_f
    else:
        raise ValueError(f"unknown feature interaction variant {variant!r}")
    return F.reshape(F.shape[-2:]) if single else F


def aggregate(A_d: Tensor, A_b: Tensor, A_o: Tensor, F: Tensor) -> Tensor:
    """k_i = [A_d^i F_i ; A_b^i F_i ; A_o^i F_i] for every factoid, shape (..., M, 3H)."""
    n = F.shape[-2]
    for a in (A_d, A_b, A_o):
        if a.shape[-1] != n:
            raise DimensionError(f"attention over {a.shape[-1]} utterances but F has {n}")
    parts = []
    for a in (A_d, A_b, A_o):
        a4 = a.reshape(a.shape + (1,)).swapaxes(-1, -2)  # (..., M, 1, N)
        k = a4 @ F  # (..., M, 1, H)
        parts.append(k.reshape(k.shape[:-2] + (k.shape[-1],)))
    return T.concat(parts, axis=-1)


@dataclass
class TopicAwareMatrix:
    columns: Tensor  # (..., M, 3H)
    A_d: Tensor
    A_b: Tensor
    A_o: Tensor

    @property
    def K(self) -> Tensor:
        return self.columns.swapaxes(-1, -2)


def topic_aware_matrix(S_u: Tensor, T_u: Tensor, S_k: Tensor, T_k: Tensor,
                       params: AttentionParameters, mask: np.ndarray | None = None,
                       ablation: str = "full", variant: str = "elementwise",
                       strict_exp: bool = False) -> TopicAwareMatrix:
    A_d, A_b, A_o = topic_attention(T_u, T_k, params, mask, ablation, strict_exp)
    F = feature_interaction(S_u, S_k, params.W_f, params.b_f, params.v_f, variant)
    return TopicAwareMatrix(aggregate(A_d, A_b, A_o, F), A_d, A_b, A_o)


ATTENTION_CSV_FIELDS = ["dialogue_id", "turn_index", "factoid_topic", "mechanism",
                        "utterance_index", "weight"]


def dump_attention(path: str | Path, rows: list[dict]) -> None:
    """Write attention weights as CSV rows (one weight per line) for heatmaps."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ATTENTION_CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "weight": repr(float(r["weight"]))})
    atomic_write_text(path, buf.getvalue())
