"""Full model assembly: lifting encoder, stacked pre-norm residual blocks,
decoding head, and the binary checkpoint format."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine
from .attention import DenseAttention, SpecGeoAttention
from .engine import Rng, Tensor
from .errors import BadMagicError, ConfigError, NumericalError, TruncatedError, VersionError
from .ffn import GATE_FORCE_MODES, PlainFFN, TaylorDecompFFN
from .geometry import CoordinateEmbedding, normalize_coords
from .layers import LayerNorm, Mlp2

CHECKPOINT_MAGIC = b"PGCK"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    layers: int = 2
    width: int = 32
    slices: int = 8
    scales: int = 2
    heads: int = 2
    d: int = 2
    d_a: int = 1
    d_u: int = 1
    dropout: float = 0.0
    disable_sga: bool = False
    disable_tdf: bool = False
    gate_force: str | None = None
    pe_frequencies: int = 8
    seed: int = 0
    # benchmark-only switch: replace slice attention by dense N^2 attention
    dense_attention: bool = False

    def validate(self) -> "ModelConfig":
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.slices < 2:
            raise ConfigError(f"slices must be >= 2, got {self.slices}")
        if self.scales < 1:
            raise ConfigError(f"scales must be >= 1, got {self.scales}")
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.gate_force not in GATE_FORCE_MODES:
            raise ConfigError(f"unknown gate_force {self.gate_force!r}")
        if self.pe_frequencies < 1:
            raise ConfigError(f"pe_frequencies must be >= 1, got {self.pe_frequencies}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data).validate()

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


class PhysGeoBlock:
    """Pre-norm residual pair: slice attention then gated feed-forward."""

    def __init__(self, rng: Rng, config: ModelConfig, gate_in_dim: int):
        self.ln1 = LayerNorm(config.width)
        if config.dense_attention:
            self.attn = DenseAttention(rng, config.d, config.width, config.heads)
        else:
            self.attn = SpecGeoAttention(
                rng,
                config.d,
                config.width,
                config.slices,
                config.heads,
                config.scales,
                use_geometry=not config.disable_sga,
            )
        self.ln2 = LayerNorm(config.width)
        if config.disable_tdf:
            self.ffn = PlainFFN(rng, config.width)
        else:
            self.ffn = TaylorDecompFFN(
                rng,
                config.width,
                gate_in_dim,
                dropout_rate=config.dropout,
                gate_force=config.gate_force,
            )

    def __call__(self, x: Tensor, coords_norm: np.ndarray, gate_feats: Tensor, rng: Rng, training: bool) -> Tensor:
        x = x + self.attn(self.ln1(x), coords_norm)
        x = x + self.ffn(self.ln2(x), gate_feats, rng, training)
        return x

    def parameters(self, prefix: str):
        return (
            self.ln1.parameters(f"{prefix}.ln1")
            + self.attn.parameters(f"{prefix}.attn")
            + self.ln2.parameters(f"{prefix}.ln2")
            + self.ffn.parameters(f"{prefix}.ffn")
        )


class PgotModel:
    """Operator network mapping (input field, coordinates) to an output field."""

    def __init__(self, config: ModelConfig):
        self.config = config.validate()
        rng = Rng(config.seed)
        self.embed = CoordinateEmbedding(config.pe_frequencies, "both")
        pe_dim = self.embed.dim(config.d)
        self.lift = Mlp2(rng, config.d_a + pe_dim, config.width, config.width)
        self.blocks = [PhysGeoBlock(rng, config, pe_dim) for _ in range(config.layers)]
        self.decoder = Mlp2(rng, config.width, config.width, config.d_u)
        self._dropout_rng = Rng(config.seed ^ 0x5EED)
        self.training = False

    def set_inspection(self, enabled: bool) -> None:
        for block in self.blocks:
            block.attn.cache_enabled = enabled
            block.ffn.cache_enabled = enabled

    def predict(self, a: np.ndarray, coords: np.ndarray) -> Tensor:
        a = np.asarray(a)
        if a.ndim != 2 or a.shape[1] != self.config.d_a:
            raise ConfigError(
                f"input field shape {a.shape} does not match d_a={self.config.d_a}"
            )
        coords_norm = normalize_coords(coords)
        pe = self.embed(coords_norm)
        pe_t = engine.constant(pe)
        x = self.lift(engine.concat([engine.constant(a), pe_t], axis=1))
        for index, block in enumerate(self.blocks):
            x = block(x, coords_norm, pe_t, self._dropout_rng, self.training)
            if not np.all(np.isfinite(x.data)):
                raise NumericalError(f"non-finite activations after block {index}", layer=index)
        out = self.decoder(x)
        if not np.all(np.isfinite(out.data)):
            raise NumericalError("non-finite activations in decoder", layer=len(self.blocks))
        return out

    def parameters(self):
        params = self.lift.parameters("lift")
        for i, block in enumerate(self.blocks):
            params += block.parameters(f"block{i}")
        params += self.decoder.parameters("decoder")
        return params

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None


def count_params(config: ModelConfig) -> int:
    """Exact learnable-scalar count for a configuration."""
    model = PgotModel(config)
    return sum(p.size for _, p in model.parameters())


# ---------------------------------------------------------------------------
# checkpoint format: magic "PGCK", version u32, config JSON, named tensors
# ---------------------------------------------------------------------------


def save_checkpoint(model: PgotModel, path) -> None:
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        config_bytes = json.dumps(model.config.to_dict(), sort_keys=True).encode()
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            name_bytes = name.encode()
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            arr = np.ascontiguousarray(p.data, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated payload reading {what}: expected {n} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path) -> PgotModel:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise VersionError(f"unsupported checkpoint version {version}")
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        config = ModelConfig.from_dict(json.loads(_read_exact(fh, config_len, "config")))
        model = PgotModel(config)
        params = dict(model.parameters())
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        if n_params != len(params):
            raise ConfigError(
                f"checkpoint has {n_params} parameters, model expects {len(params)}"
            )
        for _ in range(n_params):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode()
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            count = int(np.prod(shape)) if rank else 1
            payload = _read_exact(fh, 4 * count, f"tensor {name}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
            if name not in params:
                raise ConfigError(f"checkpoint tensor {name!r} not in model")
            if params[name].data.shape != arr.shape:
                raise ConfigError(
                    f"tensor {name!r} shape {arr.shape} != model shape {params[name].data.shape}"
                )
            params[name].data = np.ascontiguousarray(arr, dtype=engine.current_dtype())
        return model
