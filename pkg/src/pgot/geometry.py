"""Geometry-derived signals: coordinate normalization, sinusoidal position
features, and the multi-scale geometric encoder bank."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import ParameterError, Rng, Tensor
from .errors import DataError
from .layers import Linear, Mlp2


def normalize_coords(coords: np.ndarray) -> np.ndarray:
    """Affine map of the per-sample bounding box onto the unit cube.

    A degenerate axis (max == min) maps to the constant 0.5.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise DataError("coordinates contain NaN or Inf")
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = hi - lo
    out = np.empty_like(coords)
    for axis in range(coords.shape[1]):
        if span[axis] == 0.0:
            out[:, axis] = 0.5
        else:
            out[:, axis] = (coords[:, axis] - lo[axis]) / span[axis]
    return out.astype(engine.current_dtype())


def pos_embed(coords_norm: np.ndarray, frequencies: int, mode: str = "both") -> np.ndarray:
    """Sinusoidal features sin(2^k * pi * g), cos(2^k * pi * g) per axis.

    Mode "both" appends the raw normalized coordinates; all features lie
    in [-1, 1].
    """
    if frequencies < 1:
        raise ParameterError(f"frequency count must be >= 1, got {frequencies}")
    if mode not in ("sinusoidal", "raw", "both"):
        raise ParameterError(f"unknown embedding mode {mode!r}")
    g = np.asarray(coords_norm, dtype=np.float64)
    if mode == "raw":
        return g.astype(engine.current_dtype())
    feats = []
    for k in range(frequencies):
        angle = (2.0**k) * np.pi * g
        feats.append(np.sin(angle))
        feats.append(np.cos(angle))
    if mode == "both":
        feats.append(g)
    return np.concatenate(feats, axis=1).astype(engine.current_dtype())


@dataclass(frozen=True)
class CoordinateEmbedding:
    """Configuration for a sinusoidal coordinate embedding."""

    frequencies: int = 8
    mode: str = "both"

    def dim(self, d: int) -> int:
        if self.mode == "raw":
            return d
        base = 2 * d * self.frequencies
        return base + d if self.mode == "both" else base

    def __call__(self, coords_norm: np.ndarray) -> np.ndarray:
        return pos_embed(coords_norm, self.frequencies, self.mode)


class GeometricEncoderBank:
    """One two-layer encoder per spatial scale, fused to the hidden width.

    Scale s sees 10^(s-1) * g; outputs are concatenated and mixed by a
    single fusion matrix followed by GELU. Purely pointwise over mesh
    points.
    """

    def __init__(self, rng: Rng, d: int, width: int, scales: int):
        if scales < 1:
            raise ParameterError(f"scales must be >= 1, got {scales}")
        self.d = d
        self.width = width
        self.scales = scales
        self.c_geo = max(width // 2, 1)
        self.encoders = [Mlp2(rng, d, self.c_geo, self.c_geo) for _ in range(scales)]
        self.fuse = Linear(rng, scales * self.c_geo, width, bias=False)

    def scale_input(self, scale_index: int, coords_norm: np.ndarray) -> np.ndarray:
        """Input seen by encoder s (1-based scale s has multiplier 10^(s-1))."""
        return (10.0**scale_index) * np.asarray(coords_norm)

    def __call__(self, coords_norm: np.ndarray) -> Tensor:
        feats = []
        for s, enc in enumerate(self.encoders):
            scaled = engine.constant(self.scale_input(s, coords_norm))
            feats.append(enc(scaled))
        fused = self.fuse(engine.concat(feats, axis=1))
        return engine.gelu(fused)

    def parameters(self, prefix: str):
        params = []
        for s, enc in enumerate(self.encoders):
            params += enc.parameters(f"{prefix}.scale{s}")
        params += self.fuse.parameters(f"{prefix}.fuse")
        return params
