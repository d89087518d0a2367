"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_tensor: int
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    n_coords: int


# Central differences at eps=1e-5 carry roughly 1e-11 of roundoff, so gradients
# that are exactly zero by construction need a denominator floor above that.
REL_ERROR_FLOOR = 1e-6


def relative_error(a: float, n: float, floor: float = REL_ERROR_FLOOR) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check_detailed(
    f: Callable[[], Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare autodiff gradients of the scalar ``f()`` against central differences.

    ``f`` must be deterministic and read ``inputs`` (it is re-evaluated with each
    coordinate nudged in place). ``max_coords`` samples a subset of coordinates
    per tensor; by default every coordinate is probed.
    """
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    saved = [(t.requires_grad, t.grad) for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape():
        out = f()
    backward(out, tensors)
    analytic = [t.grad.copy() for t in tensors]
    for t, (rg, g) in zip(tensors, saved):
        t.requires_grad, t.grad = rg, g

    worst = GradCheckResult(0.0, -1, (), 0.0, 0.0, 0)
    count = 0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = float(f().data)
            flat[c] = orig - eps
            down = float(f().data)
            flat[c] = orig
            num = (up - down) / (2 * eps)
            ana = float(analytic[ti].reshape(-1)[c])
            err = relative_error(ana, num)
            count += 1
            if err > worst.max_rel_error or worst.worst_tensor < 0:
                worst = GradCheckResult(err, ti, tuple(np.unravel_index(c, t.shape)), ana, num, 0)
    worst.n_coords = count
    return worst


def grad_check(f: Callable[[], Tensor], x: Tensor | Sequence[Tensor], eps: float = 1e-5) -> float:
    """Worst-coordinate relative error between autodiff and central differences."""
    return grad_check_detailed(f, x, eps).max_rel_error
