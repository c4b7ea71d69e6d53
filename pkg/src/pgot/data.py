"""Synthetic operator-learning tasks with exact numerical oracles, plus the
on-disk sample format ("PGDS" binary files and a JSON manifest).

The target-producing solvers deliberately share no code with the model:
the grid task uses a sparse direct Poisson solve, the point-cloud task a
closed-form radial field.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .engine import Rng
from .errors import BadMagicError, DataError, GeneratorError, TruncatedError, VersionError

SAMPLE_MAGIC = b"PGDS"
SAMPLE_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class Sample:
    coords: np.ndarray  # (N, d) f32
    input: np.ndarray  # (N, d_a) f32
    target: np.ndarray  # (N, d_u) f32
    meta: dict = field(default_factory=dict)

    def validate(self) -> "Sample":
        for name, arr in (("coords", self.coords), ("input", self.input), ("target", self.target)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"sample field {name} contains NaN/Inf")
        if self.coords.shape[0] < 4:
            raise DataError(f"sample has {self.coords.shape[0]} points, need >= 4")
        return self


@dataclass
class NormStats:
    """Per-channel z-score statistics, computed on the train split only."""

    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    def to_dict(self) -> dict:
        return {
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(
            input_mean=np.asarray(data["input_mean"], dtype=np.float64),
            input_std=np.asarray(data["input_std"], dtype=np.float64),
            target_mean=np.asarray(data["target_mean"], dtype=np.float64),
            target_std=np.asarray(data["target_std"], dtype=np.float64),
        )


def compute_stats(samples: list[Sample]) -> NormStats:
    inputs = np.concatenate([s.input for s in samples], axis=0).astype(np.float64)
    targets = np.concatenate([s.target for s in samples], axis=0).astype(np.float64)

    def _std(arr):
        std = arr.std(axis=0)
        return np.where(std > 0, std, 1.0)

    return NormStats(inputs.mean(axis=0), _std(inputs), targets.mean(axis=0), _std(targets))


def normalize(arr: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return ((arr - mean) / std).astype(np.float32)


def denormalize(arr: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (arr * std + mean).astype(np.float32)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _poisson_operator(n: int) -> sp.csc_matrix:
    """5-point-stencil Dirichlet Laplacian on the interior of an n x n grid."""
    m = n - 2
    h = 1.0 / (n - 1)
    off = sp.diags([-1.0] * (m - 1), 1) + sp.diags([-1.0] * (m - 1), -1)
    t = sp.diags([4.0] * m) + off
    eye = sp.identity(m)
    lap = (sp.kron(eye, t) + sp.kron(off, eye)) / (h * h)
    return lap.tocsc()


def solve_poisson(source_grid: np.ndarray) -> np.ndarray:
    """Direct solve of -laplace(u) = a on the unit square, zero boundary.

    ``source_grid`` is the full n x n field including boundary nodes; the
    returned grid has zeros on the boundary.
    """
    n = source_grid.shape[0]
    lap = _poisson_operator(n)
    rhs = source_grid[1:-1, 1:-1].reshape(-1)
    interior = spla.spsolve(lap, rhs)
    u = np.zeros((n, n), dtype=np.float64)
    u[1:-1, 1:-1] = interior.reshape(n - 2, n - 2)
    return u


def gen_poisson2d(seed: int, resolution: int, samples: int) -> list[Sample]:
    """Smooth random sources on a structured grid; targets from the direct solve."""
    if not 8 <= resolution <= 64:
        raise DataError(f"resolution must be in [8, 64], got {resolution}")
    if samples < 1:
        raise DataError(f"sample count must be >= 1, got {samples}")
    xs = np.linspace(0.0, 1.0, resolution)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    coords = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    out = []
    for i in range(samples):
        rng = Rng(seed ^ i)
        n_modes = int(rng.integers(1, 6))
        a = np.zeros_like(gx, dtype=np.float64)
        for _ in range(n_modes):
            p = int(rng.integers(1, 4))
            q = int(rng.integers(1, 4))
            c = float(rng.uniform(-1.0, 1.0, ()))
            a += c * np.sin(p * np.pi * gx) * np.sin(q * np.pi * gy)
        u = solve_poisson(a)
        out.append(
            Sample(
                coords=coords.astype(np.float32),
                input=a.reshape(-1, 1).astype(np.float32),
                target=u.reshape(-1, 1).astype(np.float32),
                meta={"task": "poisson2d", "seed": seed ^ i, "resolution": resolution},
            ).validate()
        )
    return out


def radial_field(r: np.ndarray, r_in: float, r_out: float) -> np.ndarray:
    return np.log(r / r_in) / np.log(r_out / r_in)


def gen_pointcloud_stress(seed: int, points: int, samples: int) -> list[Sample]:
    """Scattered points in an annulus; closed-form logarithmic radial target."""
    if not 64 <= points <= 2048:
        raise DataError(f"point count must be in [64, 2048], got {points}")
    if samples < 1:
        raise DataError(f"sample count must be >= 1, got {samples}")
    r_out = 1.0
    out = []
    for i in range(samples):
        rng = Rng(seed ^ i)
        r_in = float(rng.uniform(0.15, 0.35, ()))
        accepted = np.empty((0, 2), dtype=np.float64)
        attempts = 0
        while accepted.shape[0] < points:
            batch = rng.uniform(-1.0, 1.0, (points * 4, 2)).astype(np.float64)
            attempts += batch.shape[0]
            if attempts > 10**6:
                raise GeneratorError("annulus rejection sampling exceeded 1e6 attempts")
            r = np.hypot(batch[:, 0], batch[:, 1])
            keep = (r >= r_in) & (r <= r_out)
            accepted = np.concatenate([accepted, batch[keep]], axis=0)
        coords = accepted[:points]
        r = np.hypot(coords[:, 0], coords[:, 1])
        dist_boundary = np.minimum(r - r_in, r_out - r)
        inputs = np.stack([np.full_like(r, r_in), dist_boundary], axis=1)
        target = radial_field(r, r_in, r_out).reshape(-1, 1)
        out.append(
            Sample(
                coords=coords.astype(np.float32),
                input=inputs.astype(np.float32),
                target=target.astype(np.float32),
                meta={"task": "pointcloud_stress", "seed": seed ^ i, "points": points},
            ).validate()
        )
    return out


GENERATORS = {
    "poisson2d": gen_poisson2d,
    "pointcloud_stress": gen_pointcloud_stress,
}


# ---------------------------------------------------------------------------
# binary sample format
# ---------------------------------------------------------------------------


def write_sample(sample: Sample, path) -> None:
    n, d = sample.coords.shape
    d_a = sample.input.shape[1]
    d_u = sample.target.shape[1]
    with open(path, "wb") as fh:
        fh.write(SAMPLE_MAGIC)
        fh.write(struct.pack("<I", SAMPLE_VERSION))
        fh.write(struct.pack("<4I", n, d, d_a, d_u))
        fh.write(np.ascontiguousarray(sample.coords, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(sample.input, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(sample.target, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated payload reading {what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_sample(path, meta: dict | None = None) -> Sample:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != SAMPLE_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {SAMPLE_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != SAMPLE_VERSION:
            raise VersionError(f"unsupported sample version {version}")
        n, d, d_a, d_u = struct.unpack("<4I", _read_exact(fh, 16, "header"))
        coords = np.frombuffer(_read_exact(fh, 4 * n * d, "coords"), dtype="<f4").reshape(n, d)
        inputs = np.frombuffer(_read_exact(fh, 4 * n * d_a, "input"), dtype="<f4").reshape(n, d_a)
        target = np.frombuffer(_read_exact(fh, 4 * n * d_u, "target"), dtype="<f4").reshape(n, d_u)
        trailing = fh.read(1)
        if trailing:
            raise DataError("unexpected trailing bytes after payload")
    return Sample(coords=coords.copy(), input=inputs.copy(), target=target.copy(), meta=dict(meta or {}))


def write_dataset(samples: list[Sample], out_dir, task: str, split: str = "train", stats: NormStats | None = None) -> dict:
    """Write one PGDS file per sample plus the split manifest.

    Train splits compute their own normalization statistics; test splits
    must be handed the train statistics.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if split == "train":
        stats = compute_stats(samples)
    elif stats is None:
        raise DataError("non-train split requires normalization stats from the train split")
    files = []
    for i, sample in enumerate(samples):
        name = f"sample_{i:04d}.pgds"
        write_sample(sample, out_dir / name)
        files.append({"file": name, "n": int(sample.coords.shape[0]), "meta": sample.meta})
    manifest = {
        "task": task,
        "split": split,
        "count": len(samples),
        "samples": files,
        "normalization": stats.to_dict(),
    }
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def read_dataset(path) -> tuple[list[Sample], dict]:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no {MANIFEST_NAME} in {path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed manifest: {exc}") from exc
    samples = []
    for entry in manifest["samples"]:
        samples.append(read_sample(path / entry["file"], meta=entry.get("meta")))
    return samples, manifest
