"""Adam with L2 weight decay folded into the gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from amrl.errors import ConfigurationError
from amrl.tensor.params import NetworkParams


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5


@dataclass
class AdamState:
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        return cls(
            0,
            {k: np.zeros(s) for k, s in params.shapes().items()},
            {k: np.zeros(s) for k, s in params.shapes().items()},
        )

    def copy(self) -> "AdamState":
        return AdamState(
            self.step_count,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
        )


def adam_step(params: NetworkParams, grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 1e-5) -> None:
    """Apply one bias-corrected Adam update in place to ``params`` and ``state``.

    The decay term is added to the gradient (``g + weight_decay * theta``)
    before the moment updates, i.e. coupled L2 regularisation.
    """
    if set(grads) != set(params):
        raise ConfigurationError("gradient names do not match parameters")
    for k, t in params.items():
        if grads[k].shape != t.shape or state.m[k].shape != t.shape or state.v[k].shape != t.shape:
            raise ConfigurationError(f"adam shape mismatch for {k}")
    state.step_count += 1
    bc1 = 1.0 - beta1 ** state.step_count
    bc2 = 1.0 - beta2 ** state.step_count
    for k, t in params.items():
        g = grads[k]
        if weight_decay:
            g = g + weight_decay * t.data
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.data = t.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
