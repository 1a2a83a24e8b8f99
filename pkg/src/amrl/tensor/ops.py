"""Differentiable operations.

Every op takes an optional ``tape``; when given, the op is recorded so
:meth:`Tape.backward` can propagate through it. Without a tape the op is a
plain forward evaluation.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from amrl.errors import ConfigurationError, NonFiniteError
from amrl.tensor import kernels
from amrl.tensor.tensor import Tape, Tensor

LOG_FLOOR = 1e-10


def _out(data: np.ndarray, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite output from {op}")
    return Tensor(data)


def conv2d(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1, plus per-channel bias."""
    if x.data.ndim != 3 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ConfigurationError(
            f"conv2d expects x[C,H,W], w[O,C,3,3], b[O]; got {x.shape}, {w.shape}, {b.shape}"
        )
    if w.shape[2:] != (3, 3):
        raise ConfigurationError(f"conv2d supports 3x3 kernels only, got {w.shape[2:]}")
    if w.shape[1] != x.shape[0]:
        raise ConfigurationError(f"conv2d channel mismatch: input {x.shape[0]}, weight {w.shape[1]}")
    if b.shape[0] != w.shape[0]:
        raise ConfigurationError(f"conv2d bias length {b.shape[0]} != filters {w.shape[0]}")
    out = _out(kernels.conv2d_forward(x.data, w.data, b.data), "conv2d")
    if tape is not None:
        def backward(g):
            return kernels.conv2d_backward(x.data, w.data, g)
        tape.record((x, w, b), out, backward)
    return out


def fully_connected(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """``w @ x + b`` for a single input vector."""
    if x.data.ndim != 1 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ConfigurationError(
            f"fully_connected expects x[N], w[M,N], b[M]; got {x.shape}, {w.shape}, {b.shape}"
        )
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ConfigurationError(
            f"fully_connected shape mismatch: x{x.shape}, w{w.shape}, b{b.shape}"
        )
    out = _out(w.data @ x.data + b.data, "fully_connected")
    if tape is not None:
        def backward(g):
            return w.data.T @ g, np.outer(g, x.data), g
        tape.record((x, w, b), out, backward)
    return out


def elu(x: Tensor, tape: Tape | None = None) -> Tensor:
    xd = x.data
    out = _out(np.where(xd > 0, xd, np.expm1(np.minimum(xd, 0.0))), "elu")
    if tape is not None:
        def backward(g):
            return (g * np.where(xd > 0, 1.0, out.data + 1.0),)
        tape.record((x,), out, backward)
    return out


def softmax(z: Tensor, tape: Tape | None = None) -> Tensor:
    e = np.exp(z.data - z.data.max())
    out = _out(e / e.sum(), "softmax")
    if tape is not None:
        p = out.data

        def backward(g):
            return (p * (g - np.dot(g, p)),)
        tape.record((z,), out, backward)
    return out


def flatten(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data.reshape(-1))
    if tape is not None:
        shape = x.shape
        tape.record((x,), out, lambda g: (g.reshape(shape),))
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Element-wise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ConfigurationError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = _out(a.data * b.data, "mul")
    if tape is not None:
        tape.record((a, b), out, lambda g: (g * b.data, g * a.data))
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _out(a.data + b.data, "add")
    if tape is not None:
        tape.record((a, b), out, lambda g: (g, g))
    return out


def add_n(terms: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    if not terms:
        raise ConfigurationError("add_n needs at least one term")
    shape = terms[0].shape
    if any(t.shape != shape for t in terms):
        raise ConfigurationError("add_n terms must share a shape")
    acc = terms[0].data.copy()
    for t in terms[1:]:
        acc = acc + t.data
    out = _out(acc, "add_n")
    if tape is not None:
        n = len(terms)
        tape.record(tuple(terms), out, lambda g: (g,) * n)
    return out


def affine(x: Tensor, scale: float, shift: float = 0.0, tape: Tape | None = None) -> Tensor:
    """``scale * x + shift`` with constant scale and shift."""
    out = _out(scale * x.data + shift, "affine")
    if tape is not None:
        tape.record((x,), out, lambda g: (scale * g,))
    return out


def square(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = _out(x.data * x.data, "square")
    if tape is not None:
        tape.record((x,), out, lambda g: (2.0 * x.data * g,))
    return out


def pick(x: Tensor, index: int, tape: Tape | None = None) -> Tensor:
    """Select one entry of a vector as a scalar tensor."""
    out = Tensor(x.data.reshape(-1)[index])
    if tape is not None:
        shape = x.shape

        def backward(g):
            gx = np.zeros(x.size)
            gx[index] = g
            return (gx.reshape(shape),)
        tape.record((x,), out, backward)
    return out


def log_clamped(x: Tensor, tape: Tape | None = None, floor: float = LOG_FLOOR) -> Tensor:
    """``log(max(x, floor))``; zero gradient where the clamp is active."""
    clamped = np.maximum(x.data, floor)
    out = _out(np.log(clamped), "log_clamped")
    if tape is not None:
        active = x.data >= floor

        def backward(g):
            return (np.where(active, g / clamped, 0.0),)
        tape.record((x,), out, backward)
    return out


def total(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    out = _out(np.asarray(x.data.sum()), "total")
    if tape is not None:
        shape = x.shape
        tape.record((x,), out, lambda g: (np.full(shape, float(g)),))
    return out


def dot(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"dot shape mismatch: {a.shape} vs {b.shape}")
    out = _out(np.asarray(np.sum(a.data * b.data)), "dot")
    if tape is not None:
        tape.record((a, b), out, lambda g: (float(g) * b.data, float(g) * a.data))
    return out
