"""Named parameter tensors with gradients and ADAM moments."""

from typing import Dict, Iterator, List

import numpy as np


class ParamStore:
    """Holds every trainable tensor of a model.

    Each entry has a parameter array, a gradient of the same shape and two
    zero-initialized ADAM moment buffers. Layers only ever add to ``grads``;
    the optimizer reads and then clears them.
    """

    def __init__(self) -> None:
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> str:
        if name in self.params:
            raise KeyError(f"parameter '{name}' already registered")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return name

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> List[str]:
        return list(self.params)

    @property
    def size(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def grads_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.grads.values())

    def load(self, params: Dict[str, np.ndarray], m=None, v=None, step: int = 0) -> None:
        """Overwrite values from a checkpoint; names and shapes must match."""
        for name, value in params.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter '{name}'")
            if self.params[name].shape != value.shape:
                raise ValueError(
                    f"shape mismatch for '{name}': {self.params[name].shape} vs {value.shape}"
                )
            self.params[name][...] = value
        if m is not None:
            for name, value in m.items():
                self.m[name][...] = value
        if v is not None:
            for name, value in v.items():
                self.v[name][...] = value
        self.step = int(step)
        self.zero_grad()
