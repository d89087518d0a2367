"""Parameter registry and the small layers the encoder and decoder are built from."""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamStore:
    """Ordered name -> parameter tensor map with seeded initialisation."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self.tensors: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], init: str = "normal",
            scale: float | None = None) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name}")
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal":
            if scale is None:
                fan_in = shape[-2] if len(shape) >= 2 else shape[0]
                scale = 1.0 / np.sqrt(fan_in)
            data = self._rng.normal(0.0, scale, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def named(self, prefix: str) -> list[Tensor]:
        return [t for n, t in self.tensors.items() if n.startswith(prefix)]

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            self.tensors[n].data[...] = arr


class RngStreams:
    """Independent generators keyed by layer name, all derived from one seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        g = self._streams.get(name)
        if g is None:
            ss = np.random.SeedSequence([self.seed, zlib.crc32(name.encode())])
            g = self._streams[name] = np.random.default_rng(ss)
        return g


class Linear:
    def __init__(self, ps: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.w = ps.add(f"{name}.w", (d_in, d_out))
        self.b = ps.add(f"{name}.b", (d_out,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm:
    def __init__(self, ps: ParamStore, name: str, dim: int):
        self.gain = ps.add(f"{name}.gain", (dim,), init="ones")
        self.bias = ps.add(f"{name}.bias", (dim,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention:
    def __init__(self, ps: ParamStore, name: str, dim: int, n_heads: int):
        if dim % n_heads:
            raise ValueError(f"hidden size {dim} not divisible by {n_heads} heads")
        self.h = n_heads
        self.dk = dim // n_heads
        self.q = Linear(ps, f"{name}.q", dim, dim)
        self.k = Linear(ps, f"{name}.k", dim, dim)
        self.v = Linear(ps, f"{name}.v", dim, dim)
        self.o = Linear(ps, f"{name}.o", dim, dim)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.h, self.dk).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, mem: Tensor, mask: np.ndarray) -> Tensor:
        """x: (B, Lq, D); mem: (B, Lk, D); mask broadcastable to (B, 1, Lq, Lk)."""
        b, lq, d = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(mem)), self._split(self.v(mem))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.dk))
        att = T.softmax(scores, axis=-1, mask=mask)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b, lq, d)
        return self.o(ctx)


class FeedForward:
    def __init__(self, ps: ParamStore, name: str, dim: int, mult: int = 4):
        self.fc1 = Linear(ps, f"{name}.fc1", dim, mult * dim)
        self.fc2 = Linear(ps, f"{name}.fc2", mult * dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class EncoderBlock:
    """Pre-norm self-attention block."""

    def __init__(self, ps: ParamStore, name: str, dim: int, n_heads: int, dropout: float):
        self.name = name
        self.ln1 = LayerNorm(ps, f"{name}.ln1", dim)
        self.attn = MultiHeadAttention(ps, f"{name}.attn", dim, n_heads)
        self.ln2 = LayerNorm(ps, f"{name}.ln2", dim)
        self.ff = FeedForward(ps, f"{name}.ff", dim)
        self.p = dropout

    def __call__(self, x: Tensor, key_mask: np.ndarray, rngs: RngStreams | None,
                 training: bool) -> Tensor:
        h = self.ln1(x)
        a = self.attn(h, h, key_mask)
        x = x + T.dropout(a, self.p, rngs and rngs.get(f"{self.name}.attn"), training)
        f = self.ff(self.ln2(x))
        return x + T.dropout(f, self.p, rngs and rngs.get(f"{self.name}.ff"), training)


class DecoderBlock:
    """Pre-norm causal self-attention, cross-attention, feed-forward."""

    def __init__(self, ps: ParamStore, name: str, dim: int, n_heads: int, dropout: float):
        self.name = name
        self.ln1 = LayerNorm(ps, f"{name}.ln1", dim)
        self.self_attn = MultiHeadAttention(ps, f"{name}.self", dim, n_heads)
        self.ln2 = LayerNorm(ps, f"{name}.ln2", dim)
        self.cross_attn = MultiHeadAttention(ps, f"{name}.cross", dim, n_heads)
        self.ln3 = LayerNorm(ps, f"{name}.ln3", dim)
        self.ff = FeedForward(ps, f"{name}.ff", dim)
        self.p = dropout

    def __call__(self, x: Tensor, self_mask: np.ndarray, mem: Tensor, mem_mask: np.ndarray,
                 rngs: RngStreams | None, training: bool) -> Tensor:
        h = self.ln1(x)
        x = x + T.dropout(self.self_attn(h, h, self_mask), self.p,
                          rngs and rngs.get(f"{self.name}.self"), training)
        h = self.ln2(x)
        x = x + T.dropout(self.cross_attn(h, mem, mem_mask), self.p,
                          rngs and rngs.get(f"{self.name}.cross"), training)
        f = self.ff(self.ln3(x))
        return x + T.dropout(f, self.p, rngs and rngs.get(f"{self.name}.ff"), training)


class LSTMCell:
    def __init__(self, ps: ParamStore, name: str, d_in: int, d_hidden: int):
        self.d = d_hidden
        self.wx = Linear(ps, f"{name}.wx", d_in, 4 * d_hidden)
        self.wh = Linear(ps, f"{name}.wh", d_hidden, 4 * d_hidden, bias=False)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        z = self.wx(x) + self.wh(h)
        d = self.d
        i = T.sigmoid(z[..., :d])
        f = T.sigmoid(z[..., d:2 * d])
        g = T.tanh(z[..., 2 * d:3 * d])
        o = T.sigmoid(z[..., 3 * d:])
        c = f * c + i * g
        return o * T.tanh(c), c
