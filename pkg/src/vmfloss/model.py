"""Fully-connected encoder producing raw embeddings."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Linear:
    """y = x W^T + b with Xavier-uniform W and zero b."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        self.weight = T.tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)), requires_grad=True)
        self.bias = T.tensor(np.zeros(fan_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight.T)
        return out if self.bias is None else T.add_bias(out, self.bias)


class MLPEncoder:
    """ReLU MLP; the last layer is linear and emits the n-dim raw embedding.

    ``widths`` lists every layer size, input first: (784, 120, 3) is the
    default MNIST shape.
    """

    def __init__(self, widths, rng: np.random.Generator):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"bad encoder widths {widths}")
        self.widths = widths
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    @property
    def dim(self) -> int:
        return self.widths[-1]

    def __call__(self, x) -> Tensor:
        h = T.constant(x)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = T.relu(h)
        return h

    def embed(self, x, batch_size: int = 4096) -> np.ndarray:
        """Forward pass without gradients, chunked to bound memory."""
        x = np.asarray(x, dtype=np.float64)
        out = [self(T.constant(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.dim))

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layer{i}.weight"] = layer.weight
            if layer.bias is not None:
                params[f"layer{i}.bias"] = layer.bias
        return params

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict) -> None:
        for k, v in self.parameters().items():
            v.data = np.array(state[k], dtype=np.float64).reshape(v.shape)
