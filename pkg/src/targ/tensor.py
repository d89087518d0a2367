"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are only recorded while a :class:`Tape` is active::

    with Tape() as tape:
        loss = (x * x).sum()
    backward(loss)

Outside a tape every op is a plain numpy computation, which is what inference
and finite-difference probing use.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class Record:
    op: str
    out: "Tensor"
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered log of differentiable operations (inputs always precede outputs)."""

    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def ops(self) -> list[str]:
        return [r.op for r in self.records]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {name or ''} contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return swapaxes(self, a, b)

    def backward(self, params: Iterable["Tensor"] | None = None) -> None:
        backward(self, params)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=DTYPE))


def _result(op: str, arr: np.ndarray, inputs: tuple[Tensor, ...], bw) -> Tensor:
    out = Tensor._wrap(arr)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.records.append(Record(op, out, inputs, bw))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, params: Iterable[Tensor] | None = None,
             retain_tape: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves listed in ``params`` that the loss does not depend on get an
    all-zero gradient. The tape's records are released afterwards unless
    ``retain_tape`` is set, which frees the saved activations right away
    instead of waiting for the cycle collector.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or not tape.records:
        raise ValueError("loss was not computed on an active tape")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite")

    try:
        produced = {id(r.out) for r in tape.records}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(tape.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for inp, gi in zip(rec.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads[key]
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for {leaf!r}")
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    finally:
        if not retain_tape:
            tape.records.clear()
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result("div", out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape)))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    if not np.isfinite(out).all():
        raise NonFiniteError("exp overflow")
    return _result("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if (xd <= 0).any():
        raise NonFiniteError("log of non-positive value")
    return _result("log", np.log(xd), (x,), lambda g: (g / xd,))


def clamp_min(x: Tensor, lo: float) -> Tensor:
    xd = x.data
    keep = xd >= lo
    return _result("clamp_min", np.where(keep, xd, lo), (x,), lambda g: (g * keep,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _result("relu", x.data * pos, (x,), lambda g: (g * pos,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    x2 = xd * xd
    inner = _GELU_C * xd * (1.0 + 0.044715 * x2)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * dinner),)

    return _result("gelu", out, (x,), bw)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select from ``a`` where ``cond`` is true, else from ``b``. ``cond`` is constant."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return _result("where", np.where(cond, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                              _unbroadcast(np.where(cond, 0.0, g), sb)))


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _result("swapaxes", np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result("slice", np.array(x.data[idx]), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    n = len(tensors)
    return _result("stack", np.stack([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise DimensionError("matmul needs at least 1-d operands")
    ka = ad.shape[-1]
    kb = bd.shape[-2] if bd.ndim > 1 else bd.shape[0]
    if ka != kb:
        raise DimensionError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def bw(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if bd.ndim == 2 and ad.ndim > 2:
            # shared weight matrix: fold the leading axes instead of a batched matmul
            ga = g @ bd.T
            gb = ad.reshape(-1, ka).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if ad.ndim == 1:
            ga = ga[..., 0, :]
        if bd.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result("matmul", out, (a, b), bw)


# ---------------------------------------------------------------------------
# neural-network primitives


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted softmax; positions where ``mask`` is False get exactly 0."""
    xd = x.data
    if xd.ndim == 0 or xd.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {xd.shape}")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not mask.any(axis=axis).all():
            raise DimensionError("softmax mask leaves an axis with no valid entries")
        xd = np.where(mask, xd, -np.inf)
    z = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result("softmax", out, (x,),
                   lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    z = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _result("log_softmax", out, (x,),
                   lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, target: int | np.ndarray) -> Tensor:
    """Mean of -log softmax(logits)[target] over all leading positions."""
    target = np.asarray(target)
    lp = log_softmax(logits, axis=-1)
    picked = take_along_last(lp, target[..., None])
    return -tmean(picked)


def take_along_last(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.put_along_axis(full, idx, g, axis=-1)
        return (full,)

    return _result("take", np.take_along_axis(x.data, idx, axis=-1), (x,), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back into touched rows only."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"token id out of range for table with {n} rows")
    width = table.shape[1:]

    def bw(g):
        full = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape((-1,) + width))
        return (full,)

    return _result("embedding", table.data[ids], (table,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        n = xd.shape[-1]
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
        return (dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.shape))

    return _result("layer_norm", out, (x, gain, bias), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    if not training or p == 0.0:
        return x
    if p == 1.0:
        return x * 0.0
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def _pad_axis(a: np.ndarray, axis: int, left: int, right: int, value: float) -> np.ndarray:
    widths = [(0, 0)] * a.ndim
    widths[axis] = (left, right)
    return np.pad(a, widths, constant_values=value)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: str = "same") -> Tensor:
    """Channels-last 1-d convolution.

    x: (..., L, C_in); weight: (k, C_in, C_out); output (..., L_out, C_out).
    ``padding="same"`` zero-pads so L_out == L for odd k.
    """
    xd, wd = x.data, weight.data
    k, cin, cout = wd.shape
    if xd.shape[-1] != cin:
        raise DimensionError(f"conv1d channel mismatch: input {xd.shape}, weight {wd.shape}")
    L = xd.shape[-2]
    if padding == "same":
        left, right = (k - 1) // 2, k // 2
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if k > L + left + right:
        raise DimensionError(f"kernel size {k} exceeds padded input length {L + left + right}")
    xp = _pad_axis(xd, -2, left, right, 0.0)
    lout = xp.shape[-2] - k + 1
    cols = np.concatenate([xp[..., t:t + lout, :] for t in range(k)], axis=-1)
    w2 = wd.reshape(k * cin, cout)
    out = cols @ w2
    inputs: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        out = out + bias.data
        inputs = (x, weight, bias)

    def bw(g):
        gw = np.swapaxes(cols, -1, -2) @ g
        gw = gw.reshape((-1,) + gw.shape[-2:]).sum(axis=0).reshape(wd.shape)
        gcols = g @ w2.T
        gxp = np.zeros(xp.shape, dtype=DTYPE)
        for t in range(k):
            gxp[..., t:t + lout, :] += gcols[..., t * cin:(t + 1) * cin]
        gx = gxp[..., left:left + L, :]
        grads = [gx, gw]
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _result("conv1d", out, inputs, bw)


def maxpool1d(x: Tensor, kernel: int, padding: str = "same") -> Tensor:
    """Stride-1 max pooling over axis -2 of a channels-last input (pads with -inf)."""
    xd = x.data
    L = xd.shape[-2]
    if padding == "same":
        left, right = (kernel - 1) // 2, kernel // 2
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    if kernel > L + left + right:
        raise DimensionError(f"kernel size {kernel} exceeds padded input length {L + left + right}")
    xp = _pad_axis(xd, -2, left, right, -np.inf)
    lout = xp.shape[-2] - kernel + 1
    windows = np.stack([xp[..., t:t + lout, :] for t in range(kernel)], axis=-1)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gxp = np.zeros(xp.shape, dtype=DTYPE)
        for t in range(kernel):
            gxp[..., t:t + lout, :] += np.where(arg == t, g, 0.0)
        return (gxp[..., left:left + L, :],)

    return _result("maxpool1d", out, (x,), bw)
