"""Dense tensor arithmetic with reverse-mode automatic differentiation.

Values are stored as contiguous numpy arrays in 32-bit floats. A 64-bit
mode exists for finite-difference gradient checks (see ``float64_mode``).
Reductions that mix mesh points (matmul, sum, mean) accumulate in 64-bit
regardless of mode, so results are insensitive to summation order at the
output precision.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "Rng",
    "ShapeError",
    "ParameterError",
    "ContractError",
    "tensor",
    "constant",
    "parameter",
    "float64_mode",
    "current_dtype",
    "reset_alloc_stats",
    "alloc_stats",
    "backward",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sigmoid",
    "gelu",
    "exp",
    "sqrt",
    "softplus",
    "clip_min",
    "sum_",
    "mean_",
    "softmax",
    "layer_norm",
    "dropout",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """An operation parameter is outside its documented range."""


class ContractError(RuntimeError):
    """A precondition of the autodiff contract was violated."""


# ---------------------------------------------------------------------------
# precision mode and allocation accounting
# ---------------------------------------------------------------------------

_DTYPE = np.float32

_ALLOC = {"bytes": 0, "max_single": 0, "count": 0}


def current_dtype():
    return _DTYPE


@contextlib.contextmanager
def float64_mode():
    """Run enclosed computation in 64-bit floats (gradient-check mode)."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.float64
    try:
        yield
    finally:
        _DTYPE = prev


def reset_alloc_stats() -> None:
    _ALLOC["bytes"] = 0
    _ALLOC["max_single"] = 0
    _ALLOC["count"] = 0


def alloc_stats() -> dict:
    """Cumulative bytes allocated for tensor storage since the last reset.

    ``max_single`` is the largest single tensor allocated; used to assert
    that no N-by-N intermediate exists in the linear-attention path.
    """
    return dict(_ALLOC)


# ---------------------------------------------------------------------------
# PRNG
# ---------------------------------------------------------------------------


class Rng:
    """Deterministic counter-based generator (Philox 4x64).

    The same seed yields a bit-identical stream across runs and platforms;
    per-sample streams are derived as ``seed ^ index``.
    """

    ALGORITHM = "philox4x64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def stream(self, index: int) -> "Rng":
        return Rng(self.seed ^ int(index))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(_DTYPE)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(size=shape).astype(_DTYPE)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def random(self, shape) -> np.ndarray:
        return self._gen.random(size=shape)


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------


class Tensor:
    """Dense row-major array, immutable after creation by convention.

    ``grad`` is populated by ``backward`` for every tensor that requires
    gradients. Optimizers mutate leaf ``data`` in place between tapes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=_DTYPE))
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None
        _ALLOC["bytes"] += arr.nbytes
        _ALLOC["count"] += 1
        if arr.nbytes > _ALLOC["max_single"]:
            _ALLOC["max_single"] = arr.nbytes

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=_DTYPE))


class Tape:
    """Ordered record of operations for one forward pass.

    Records are appended in execution order, so a single reverse sweep is
    a valid reverse-topological traversal.
    """

    current: Optional["Tape"] = None

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        self._outer = Tape.current
        Tape.current = self
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape.current = self._outer
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable):
        self._records.append((out, parents, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for i in range(len(self._records) - 1, -1, -1):
            out, parents, backward_fn = self._records[i]
            # every consumer of `out` sits later on the tape, so its grad is
            # final here; release the record to keep peak memory bounded
            self._records[i] = None
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            out.grad = None
            for parent, g in zip(parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.ascontiguousarray(g, dtype=parent.data.dtype)
                else:
                    parent.grad = parent.grad + g
        self._records.clear()


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss recorded on a tape."""
    if loss._tape is None:
        raise ContractError("loss is not on an active tape")
    loss._tape.backward(loss)


def _make(out_data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = Tape.current
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape.record(out, tuple(parents), backward_fn)
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = _accum_sum(grad, axis=tuple(range(extra)), keepdims=False)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = _accum_sum(grad, axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accum_sum(a: np.ndarray, axis, keepdims: bool) -> np.ndarray:
    # 64-bit accumulation keeps reductions order-insensitive at f32 output
    return a.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)


def _accum_matmul(a: np.ndarray, b: np.ndarray, out_dtype) -> np.ndarray:
    res = np.matmul(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False))
    return res.astype(out_dtype, copy=False)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(x.dtype)

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), bwd)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = (x * cdf).astype(x.dtype)

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make(data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / data,)

    return _make(data, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    data = (np.logaddexp(0.0, x)).astype(x.dtype)

    def bwd(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * s,)

    return _make(data, (a,), bwd)


def clip_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient is zero where the floor binds."""
    data = np.maximum(a.data, floor)
    mask = a.data > floor

    def bwd(g):
        return (g * mask,)

    return _make(data, (a,), bwd)


def dropout(a: Tensor, rate: float, rng: Rng, training: bool) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    scale = 1.0 / (1.0 - rate)
    data = a.data * keep * scale

    def bwd(g):
        return (g * keep * scale,)

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    data = _accum_matmul(a.data, b.data, a.data.dtype)

    def bwd(g):
        ga = _accum_matmul(g, np.swapaxes(b.data, -1, -2), g.dtype)
        gb = _accum_matmul(np.swapaxes(a.data, -1, -2), g, g.dtype)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(data, (a, b), bwd)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.ascontiguousarray(np.transpose(a.data, axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _make(data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(old),)

    return _make(data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        out = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _make(data, tuple(tensors), bwd)


def _getitem(a: Tensor, index) -> Tensor:
    data = np.ascontiguousarray(a.data[index])

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = _accum_sum(a.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)
        g2 = g
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            ndim = a.data.ndim
            for ax in sorted(x if x >= 0 else x + ndim for x in axes):
                g2 = np.expand_dims(g2, ax)
        return (np.broadcast_to(g2, a.data.shape).astype(a.data.dtype),)

    return _make(data, (a,), bwd)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, _wrap(1.0 / count))


# ---------------------------------------------------------------------------
# fused ops
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = (e / _accum_sum(e, axis=axis, keepdims=True)).astype(x.data.dtype)

    def bwd(g):
        inner = _accum_sum(g * data, axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    c = x.data.shape[-1]
    if gain.data.shape != (c,) or bias.data.shape != (c,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} do not match last axis {c}"
        )
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = ((x.data.astype(np.float64) - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = ((x.data - mu) * inv).astype(x.data.dtype)
    data = xhat * gain.data + bias.data

    def bwd(g):
        dgain = _accum_sum(g * xhat, axis=tuple(range(g.ndim - 1)), keepdims=False)
        dbias = _accum_sum(g, axis=tuple(range(g.ndim - 1)), keepdims=False)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True, dtype=np.float64)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True, dtype=np.float64)
        dx = ((dxhat - m1 - xhat * m2) * inv).astype(g.dtype)
        return dx, dgain, dbias

    return _make(data, (x, gain, bias), bwd)
