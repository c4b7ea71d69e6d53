"""Feed-forward variants: the Taylor-style expert blend gated by spatial
coordinates, and the plain two-layer perceptron used as its ablation."""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Rng, Tensor
from .errors import ConfigError
from .layers import Linear, Mlp2

GATE_FORCE_MODES = (None, "zero", "one", "half")


class TaylorDecompFFN:
    """Blend of a linear expert and a non-linear expert.

    The per-channel blend weight comes from a sigmoid gate that sees only
    the embedded coordinates, never the features. Experts carry no bias so
    the linear expert is exactly linear and both map zero to zero.
    """

    def __init__(
        self,
        rng: Rng,
        width: int,
        gate_in_dim: int,
        dropout_rate: float = 0.0,
        gate_force: str | None = None,
    ):
        if gate_force not in GATE_FORCE_MODES:
            raise ConfigError(f"unknown gate_force mode {gate_force!r}")
        hidden = 2 * width
        self.width = width
        self.dropout_rate = dropout_rate
        self.gate_force = gate_force
        self.lin1 = Linear(rng, width, hidden, bias=False)
        self.lin2 = Linear(rng, hidden, width, bias=False)
        self.non1 = Linear(rng, width, hidden, bias=False)
        self.non2 = Linear(rng, hidden, width, bias=False)
        self.gate = Mlp2(rng, gate_in_dim, hidden, width)
        self.cache_enabled = False
        self.last_gate: np.ndarray | None = None

    def linear_expert(self, x: Tensor, rng: Rng, training: bool) -> Tensor:
        h = engine.dropout(self.lin1(x), self.dropout_rate, rng, training)
        return self.lin2(h)

    def nonlinear_expert(self, x: Tensor) -> Tensor:
        return self.non2(engine.gelu(self.non1(x)))

    def spatial_gate(self, gate_feats: Tensor) -> Tensor:
        return engine.sigmoid(self.gate(gate_feats))

    def __call__(self, x: Tensor, gate_feats: Tensor, rng: Rng, training: bool = False) -> Tensor:
        if self.gate_force == "zero":
            alpha = engine.constant(np.zeros((x.shape[0], self.width)))
        elif self.gate_force == "one":
            alpha = engine.constant(np.ones((x.shape[0], self.width)))
        elif self.gate_force == "half":
            alpha = engine.constant(np.full((x.shape[0], self.width), 0.5))
        else:
            alpha = self.spatial_gate(gate_feats)
        if self.cache_enabled:
            self.last_gate = alpha.data.copy()
        f_lin = self.linear_expert(x, rng, training)
        f_non = self.nonlinear_expert(x)
        one = engine.constant(np.ones((), dtype=alpha.data.dtype))
        return (one - alpha) * f_lin + alpha * f_non

    def parameters(self, prefix: str):
        return (
            self.lin1.parameters(f"{prefix}.lin1")
            + self.lin2.parameters(f"{prefix}.lin2")
            + self.non1.parameters(f"{prefix}.non1")
            + self.non2.parameters(f"{prefix}.non2")
            + self.gate.parameters(f"{prefix}.gate")
        )


class PlainFFN:
    """Two-layer GELU perceptron; the "no expert decomposition" ablation."""

    def __init__(self, rng: Rng, width: int):
        self.mlp = Mlp2(rng, width, 2 * width, width)
        self.cache_enabled = False
        self.last_gate = None

    def __call__(self, x: Tensor, gate_feats: Tensor, rng: Rng, training: bool = False) -> Tensor:
        return self.mlp(x)

    def parameters(self, prefix: str):
        return self.mlp.parameters(f"{prefix}.mlp")
