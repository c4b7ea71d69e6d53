"""Slice attention: geometry-informed soft assignment of N mesh points to M
latent tokens, multi-head self-attention over the tokens, and projection
back to the mesh. Runs in O(N*M) time and memory; no N-by-N intermediate
is ever allocated.

``DenseAttention`` is a deliberately quadratic substitute used only by the
efficiency benchmark as a contrast baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Rng, ShapeError, Tensor
from .geometry import GeometricEncoderBank
from .layers import Linear, init_uniform

DEAD_SLICE_EPS = 1e-8


@dataclass
class AssignmentMatrix:
    """Row-stochastic N-by-M slicing weights plus per-slice mass."""

    values: np.ndarray
    column_sums: np.ndarray

    @property
    def dead_slices(self) -> int:
        return int(np.sum(self.column_sums < DEAD_SLICE_EPS))


class LatentMhsa:
    """Standard multi-head self-attention over the M latent tokens."""

    def __init__(self, rng: Rng, width: int, heads: int):
        if width % heads != 0:
            raise ShapeError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.wq = Linear(rng, width, width, bias=False)
        self.wk = Linear(rng, width, width, bias=False)
        self.wv = Linear(rng, width, width, bias=False)
        self.wo = Linear(rng, width, width, bias=False)

    def __call__(self, z: Tensor) -> Tensor:
        m = z.shape[0]
        h, dh = self.heads, self.head_dim

        def split(t):  # (M, C) -> (H, M, Dh)
            return engine.transpose(engine.reshape(t, (m, h, dh)), (1, 0, 2))

        q = split(self.wq(z))
        k = split(self.wk(z))
        v = split(self.wv(z))
        scores = engine.matmul(q, engine.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
        attn = engine.softmax(scores, axis=-1)
        out = engine.matmul(attn, v)  # (H, M, Dh)
        out = engine.reshape(engine.transpose(out, (1, 0, 2)), (m, self.width))
        return self.wo(out)

    def parameters(self, prefix: str):
        return (
            self.wq.parameters(f"{prefix}.wq")
            + self.wk.parameters(f"{prefix}.wk")
            + self.wv.parameters(f"{prefix}.wv")
            + self.wo.parameters(f"{prefix}.wo")
        )


class SpecGeoAttention:
    """Geometry-guided slicing attention layer.

    The slicing query is X W_x plus the multi-scale geometric encoding;
    with ``use_geometry=False`` the layer degrades to plain slice
    attention (the "no geometry injection" ablation).
    """

    def __init__(
        self,
        rng: Rng,
        d: int,
        width: int,
        slices: int,
        heads: int,
        scales: int,
        use_geometry: bool = True,
    ):
        if slices < 2:
            raise ShapeError(f"slice count must be >= 2, got {slices}")
        self.width = width
        self.slices = slices
        self.wx = Linear(rng, width, width, bias=False)
        self.wf = Linear(rng, width, width, bias=False)
        self.prototypes = init_uniform(rng, width, (slices, width))
        # softplus(raw) == 0.5 at init
        self.tau_raw = engine.parameter(np.full((1,), math.log(math.expm1(0.5))))
        self.bank = GeometricEncoderBank(rng, d, width, scales) if use_geometry else None
        self.mhsa = LatentMhsa(rng, width, heads)
        self.cache_enabled = False
        self.last_assignment: AssignmentMatrix | None = None
        self.dead_slice_events = 0

    def geometry_informed_query(self, x: Tensor, coords_norm: np.ndarray) -> Tensor:
        xq = self.wx(x)
        if self.bank is not None:
            xq = xq + self.bank(coords_norm)
        return xq

    def compute_assignment(self, xq: Tensor) -> Tensor:
        tau = engine.softplus(self.tau_raw)
        logits = engine.div(engine.matmul(xq, engine.transpose(self.prototypes)), tau)
        return engine.softmax(logits, axis=1)

    def slice_tokens(self, assignment: Tensor, x: Tensor) -> Tensor:
        """Mass-normalized aggregation of projected features into M tokens."""
        xf = self.wf(x)
        col = engine.sum_(assignment, axis=0)  # (M,)
        num = engine.matmul(engine.transpose(assignment), xf)  # (M, C)
        denom = engine.reshape(engine.clip_min(col, DEAD_SLICE_EPS), (self.slices, 1))
        return engine.div(num, denom)

    def deslice(self, assignment: Tensor, z: Tensor) -> Tensor:
        return engine.matmul(assignment, z)

    def __call__(self, x: Tensor, coords_norm: np.ndarray) -> Tensor:
        xq = self.geometry_informed_query(x, coords_norm)
        assignment = self.compute_assignment(xq)
        z = self.slice_tokens(assignment, x)
        z = self.mhsa(z)
        out = self.deslice(assignment, z)
        col = assignment.data.sum(axis=0, dtype=np.float64)
        dead = int(np.sum(col < DEAD_SLICE_EPS))
        if dead:
            self.dead_slice_events += dead
        if self.cache_enabled:
            self.last_assignment = AssignmentMatrix(
                values=assignment.data.copy(), column_sums=col.astype(assignment.data.dtype)
            )
        return out

    def parameters(self, prefix: str):
        params = (
            self.wx.parameters(f"{prefix}.wx")
            + self.wf.parameters(f"{prefix}.wf")
            + [(f"{prefix}.prototypes", self.prototypes), (f"{prefix}.tau_raw", self.tau_raw)]
        )
        if self.bank is not None:
            params += self.bank.parameters(f"{prefix}.bank")
        params += self.mhsa.parameters(f"{prefix}.mhsa")
        return params


class DenseAttention:
    """Quadratic full self-attention over all N points (benchmark contrast).

    Coded separately from the latent MHSA on purpose; it allocates N-by-N
    score matrices per head.
    """

    def __init__(self, rng: Rng, d: int, width: int, heads: int):
        self.inner = LatentMhsa(rng, width, heads)
        self.cache_enabled = False
        self.last_assignment = None

    def __call__(self, x: Tensor, coords_norm: np.ndarray) -> Tensor:
        return self.inner(x)

    def parameters(self, prefix: str):
        return self.inner.parameters(f"{prefix}.dense")
