"""Small parameterized building blocks shared by the model modules."""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Rng, Tensor


def init_uniform(rng: Rng, fan_in: int, shape) -> Tensor:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], the scheme used everywhere."""
    bound = 1.0 / np.sqrt(fan_in)
    return engine.parameter(rng.uniform(-bound, bound, shape))


class Linear:
    def __init__(self, rng: Rng, d_in: int, d_out: int, bias: bool = True):
        self.w = init_uniform(rng, d_in, (d_in, d_out))
        self.b = init_uniform(rng, d_in, (d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = engine.matmul(x, self.w)
        if self.b is not None:
            y = y + self.b
        return y

    def parameters(self, prefix: str):
        params = [(f"{prefix}.w", self.w)]
        if self.b is not None:
            params.append((f"{prefix}.b", self.b))
        return params


class Mlp2:
    """Two-layer perceptron with GELU between."""

    def __init__(self, rng: Rng, d_in: int, d_hidden: int, d_out: int, bias: bool = True):
        self.fc1 = Linear(rng, d_in, d_hidden, bias=bias)
        self.fc2 = Linear(rng, d_hidden, d_out, bias=bias)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(engine.gelu(self.fc1(x)))

    def parameters(self, prefix: str):
        return self.fc1.parameters(f"{prefix}.fc1") + self.fc2.parameters(f"{prefix}.fc2")


class LayerNorm:
    def __init__(self, width: int):
        self.gain = engine.parameter(np.ones(width))
        self.bias = engine.parameter(np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return engine.layer_norm(x, self.gain, self.bias)

    def parameters(self, prefix: str):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]
