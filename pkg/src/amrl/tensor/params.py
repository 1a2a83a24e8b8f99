"""Named, ordered parameter collections."""
from __future__ import annotations

from collections.abc import Iterator, Mapping

import numpy as np

from amrl.errors import ConfigurationError
from amrl.tensor.tensor import Tape, Tensor


class NetworkParams(Mapping):
    """Ordered ``name -> Tensor`` mapping of learnable parameters."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = dict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def add(self, name: str, data) -> Tensor:
        if name in self._tensors:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(data, name=name)
        self._tensors[name] = t
        return t

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: t.shape for k, t in self._tensors.items()}

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: Tensor(t.data.copy(), name=k) for k, t in self._tensors.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._tensors.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        if set(arrays) != set(self._tensors):
            raise ConfigurationError("parameter names do not match")
        for k, t in self._tensors.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.shape:
                raise ConfigurationError(f"shape mismatch for {k}: {a.shape} vs {t.shape}")
            t.data = a.copy()

    def gradients(self, tape: Tape) -> dict[str, np.ndarray]:
        """Per-parameter gradients from the tape's last backward (zeros if unused)."""
        return {k: tape.grad(t) for k, t in self._tensors.items()}
