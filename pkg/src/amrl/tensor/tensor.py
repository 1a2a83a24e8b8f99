"""Dense float64 tensors and the tape that records operations on them."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from amrl.errors import ContractViolation, NonFiniteError


class Tensor:
    """An n-d float64 array that can take part in a recorded computation.

    Gradients are never stored on the tensor itself; they live on the
    :class:`Tape` that recorded the computation, so one parameter tensor can
    be read by several tapes without interference.
    """

    __slots__ = ("data", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Records operations in execution order and replays them backwards."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.grads: dict[int, np.ndarray] = {}

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> Tensor:
        self.nodes.append(_Node(tuple(inputs), output, backward))
        return output

    def zero_grad(self) -> None:
        self.grads = {}

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate d(loss)/d(node) for every tensor reachable from ``loss``.

        Nodes are visited in exact reverse recording order, which is a valid
        reverse topological order because inputs always exist before outputs.
        """
        if loss.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, g in grads.items():
            if not np.isfinite(g).all():
                raise NonFiniteError("non-finite gradient during backward pass")
        self.grads = grads
        return grads

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward's loss w.r.t. ``t`` (zeros if unreachable)."""
        g = self.grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g
