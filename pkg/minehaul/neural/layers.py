"""Dense layers, activations and multilayer perceptrons.

``forward`` returns the output together with whatever the matching
``backward`` needs; ``backward`` takes the upstream gradient and that cache,
adds parameter gradients into the owning ``ParamStore`` and returns the
gradient with respect to the layer input.
"""

import math
from typing import Any, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from minehaul.errors import DimensionError
from minehaul.neural.params import ParamStore

ActivationName = Literal["relu", "tanh", "sigmoid", "softplus", "identity"]


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["dense", "activation"]
    fan_in: int = Field(0, ge=0)
    fan_out: int = Field(0, ge=0)
    activation: Optional[ActivationName] = None

    @model_validator(mode="after")
    def _consistent(self) -> "LayerSpec":
        if self.kind == "dense" and (self.fan_in <= 0 or self.fan_out <= 0):
            raise ValueError("dense layers need positive fan-in and fan-out")
        if self.kind == "activation" and self.activation is None:
            raise ValueError("activation layers need an activation name")
        return self


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def activate(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return expit(x)
    if kind == "softplus":
        return softplus(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation '{kind}'")


def activate_grad(kind: str, x: np.ndarray) -> np.ndarray:
    """Elementwise derivative of ``activate(kind, x)`` with respect to x."""
    if kind == "relu":
        return (x > 0.0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "sigmoid":
        s = expit(x)
        return s * (1.0 - s)
    if kind == "softplus":
        return expit(x)
    if kind == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown activation '{kind}'")


class Dense:
    """Affine layer y = x W + b."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        fan_in: int,
        fan_out: int,
        rng: np.random.Generator,
    ):
        self.spec = LayerSpec(kind="dense", fan_in=fan_in, fan_out=fan_out)
        self.name = name
        self.store = store
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        self.w = store.add(f"{name}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self.b = store.add(f"{name}.b", np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if x.ndim != 2 or x.shape[1] != self.spec.fan_in:
            raise DimensionError(self.name, self.spec.fan_in, x.shape[-1] if x.ndim else 0)
        return x @ self.store.params[self.w] + self.store.params[self.b], x

    def backward(self, dy: np.ndarray, cache: np.ndarray) -> np.ndarray:
        self.store.grads[self.w] += cache.T @ dy
        self.store.grads[self.b] += dy.sum(axis=0)
        return dy @ self.store.params[self.w].T


class Activation:
    def __init__(self, kind: ActivationName):
        self.spec = LayerSpec(kind="activation", activation=kind)
        self.kind = kind

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return activate(self.kind, x), x

    def backward(self, dy: np.ndarray, cache: np.ndarray) -> np.ndarray:
        return dy * activate_grad(self.kind, cache)


class MLP:
    """Stack of dense layers, each followed by an activation.

    Args:
        store: Parameter store the dense layers register into
        name: Prefix for parameter names
        sizes: Widths ``[in, h1, ..., out]``
        rng: Seeded generator used for initialization
        activation: Activation after every hidden layer
        final_activation: Activation after the last layer ("identity" for none)
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: ActivationName = "relu",
        final_activation: ActivationName = "relu",
    ):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.name = name
        self.sizes = tuple(int(s) for s in sizes)
        self.layers: List[Any] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.layers.append(Dense(store, f"{name}.{i}", fan_in, fan_out, rng))
            last = i == len(self.sizes) - 2
            kind = final_activation if last else activation
            if kind != "identity":
                self.layers.append(Activation(kind))

    @property
    def specs(self) -> List[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def fan_in(self) -> int:
        return self.sizes[0]

    @property
    def fan_out(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dy: np.ndarray, caches: List[np.ndarray]) -> np.ndarray:
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(dy, cache)
        return dy

    def relu_pattern(self, caches: List[np.ndarray]) -> bytes:
        """Sign pattern of every ReLU input; changes when a probe crosses a kink."""
        parts = [
            (cache > 0.0).tobytes()
            for layer, cache in zip(self.layers, caches)
            if isinstance(layer, Activation) and layer.kind == "relu"
        ]
        return b"".join(parts)
