"""Named parameter storage and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from lvnet.errors import ConfigError, TrainingError
from lvnet.numerics.tensor import Tensor


class ParameterStore:
    """Hierarchically named parameters, iterated in lexicographic name order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.ascontiguousarray(value), requires_grad=trainable)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def count(self, prefix: str = "") -> int:
        return sum(t.size for n, t in self._params.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def cast(self, dtype) -> None:
        """Change the dtype of every parameter in place (tensor objects are kept)."""
        for t in self._params.values():
            t.data = t.data.astype(dtype)
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise ConfigError(f"parameter set mismatch: {sorted(missing)[:5]}")
        for name, arr in state.items():
            t = self._params[name]
            if tuple(arr.shape) != t.shape:
                raise ConfigError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = np.array(arr, dtype=t.dtype)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    store: ParameterStore,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update of every trainable parameter; clears gradients."""
    pending = []
    for name, p in store.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise TrainingError(f"missing gradient for trainable parameter {name!r}")
        pending.append((name, p))
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in pending:
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.dtype, copy=False)
        p.grad = None
