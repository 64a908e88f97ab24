"""Small trainable modules: affine maps and two-layer tanh MLPs.

Parameters are plain Tensors collected into ordered dicts so the trainer,
the checkpoint writer and the gradient checker all see one flat namespace
of named arrays.
"""

from __future__ import annotations

import numpy as np

from dualpath.rng import Rng
from dualpath.tensor import Tensor


def glorot(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    """Glorot/Xavier uniform init for a (fan_in, fan_out) weight."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Affine:
    """y = x @ W + b with W of shape (d_in, d_out)."""

    def __init__(self, rng: Rng, d_in: int, d_out: int, name: str):
        self.name = name
        self.weight = Tensor(glorot(rng, d_in, d_out))
        self.bias = Tensor(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}


class TanhMlp:
    """affine -> tanh -> (dropout in train mode) -> affine.

    ``activation`` is injectable so tests can run the identity case;
    the default is Tensor.tanh.
    """

    def __init__(self, rng: Rng, d_in: int, d_hidden: int, d_out: int, name: str,
                 dropout: float = 0.0, activation=None):
        self.name = name
        self.dropout = float(dropout)
        self.activation = activation if activation is not None else Tensor.tanh
        self.lin1 = Affine(rng.child("lin1"), d_in, d_hidden, f"{name}.lin1")
        self.lin2 = Affine(rng.child("lin2"), d_hidden, d_out, f"{name}.lin2")

    def __call__(self, x: Tensor, train: bool = False, rng: Rng | None = None) -> Tensor:
        h = self.activation(self.lin1(x))
        if train and self.dropout > 0.0:
            if rng is None:
                raise ValueError("dropout in train mode needs an rng")
            keep = 1.0 - self.dropout
            mask = (rng.uniform(size=h.data.shape) < keep) / keep
            h = h * Tensor(mask)
        return self.lin2(h)

    def params(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.lin1.params())
        out.update(self.lin2.params())
        return out


class LayerNormParams:
    """Gain and bias for a layer_norm over the last axis."""

    def __init__(self, dim: int, name: str):
        self.name = name
        self.gain = Tensor(np.ones(dim))
        self.bias = Tensor(np.zeros(dim))

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.gain": self.gain, f"{self.name}.bias": self.bias}
