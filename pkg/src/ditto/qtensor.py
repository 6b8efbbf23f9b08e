"""Quantized tensors and exact integer reference kernels.

Every linear operator in the package is lowered to a batched integer matmul
``(B, R, K) @ (B, K, N)``. The reference path here is the oracle that all
difference-domain execution is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

QMAX = 127
# |a*w| <= 127*127; 2**15 terms keep the int32 accumulator far from overflow.
MAX_REDUCTION = 2**15
INT32_MAX = 2**31 - 1


class QuantizationError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class OverflowRisk(ValueError):
    pass


@dataclass(frozen=True)
class QuantScale:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not np.isfinite(v) or v <= 0:
            raise QuantizationError(f"scale must be positive and finite, got {self.value!r}")
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


def _as_scale(s) -> QuantScale:
    return s if isinstance(s, QuantScale) else QuantScale(s)


@dataclass(frozen=True)
class QuantTensor:
    """Per-tensor symmetric int8 tensor, values in [-127, 127]."""

    values: np.ndarray
    scale: QuantScale

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.issubdtype(v.dtype, np.integer):
            raise QuantizationError("QuantTensor values must be integers")
        if v.size and (v.min() < -QMAX or v.max() > QMAX):
            raise QuantizationError("QuantTensor values must lie in [-127, 127]")
        v = v.astype(np.int8)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "scale", _as_scale(self.scale))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def __eq__(self, other):
        if not isinstance(other, QuantTensor):
            return NotImplemented
        return (self.scale == other.scale and self.dims == other.dims
                and bool(np.array_equal(self.values, other.values)))

    __hash__ = None


@dataclass(frozen=True)
class AccumTensor:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.issubdtype(v.dtype, np.integer):
            raise ShapeError("AccumTensor values must be integers")
        if v.size and (v.min() < -INT32_MAX - 1 or v.max() > INT32_MAX):
            raise OverflowRisk("accumulator exceeds signed 32-bit range")
        v = v.astype(np.int32)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, AccumTensor):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values)) and self.dims == other.dims

    __hash__ = None


def calibrate_scale(samples) -> QuantScale:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise QuantizationError("cannot calibrate from an empty tensor")
    if not np.all(np.isfinite(x)):
        raise QuantizationError("calibration samples contain non-finite values")
    m = float(np.max(np.abs(x)))
    return QuantScale(m / QMAX if m > 0 else 1.0)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x, s) -> QuantTensor:
    s = _as_scale(s)
    x = np.asarray(x, dtype=np.float64)
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise QuantizationError(f"non-finite element at index {idx}")
    q = np.clip(round_half_away(x / s.value), -QMAX, QMAX)
    return QuantTensor(q.astype(np.int8), s)


def dequantize(q: QuantTensor) -> np.ndarray:
    return q.values.astype(np.float64) * q.scale.value


# --------------------------------------------------------------------------
# Layer descriptors and lowering
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerDesc:
    """Kernel-level description of a linear operator.

    ``op`` is one of ``matmul``, ``conv2d``, ``attn_score``, ``attn_context``.
    For attention ops the second operand is an activation treated as a weight.
    """

    op: str
    stride: int = 1
    padding: int = 0
    heads: int = 1
    chw_in: bool = False
    chw_out: bool = False
    hw: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.op not in ("matmul", "conv2d", "attn_score", "attn_context"):
            raise ValueError(f"unknown linear op {self.op!r}")
        if self.stride < 1 or self.padding < 0 or self.heads < 1:
            raise ValueError("stride/heads must be >= 1 and padding >= 0")


MATMUL = LayerDesc("matmul")


def im2col(a: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """(C, H, W) -> (Ho*Wo, C*kh*kw), rows in row-major window order."""
    c, h, w = a.shape
    ap = np.pad(a, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("convolution kernel larger than padded input")
    cols = np.empty((ho * wo, c * kh * kw), dtype=a.dtype)
    r = 0
    for y in range(ho):
        for x in range(wo):
            patch = ap[:, y * stride:y * stride + kh, x * stride:x * stride + kw]
            cols[r] = patch.reshape(-1)
            r += 1
    return cols


def conv_out_hw(in_hw: Sequence[int], k: Sequence[int], stride: int, padding: int):
    return ((in_hw[0] + 2 * padding - k[0]) // stride + 1,
            (in_hw[1] + 2 * padding - k[1]) // stride + 1)


def lower_operands(a: np.ndarray, w: np.ndarray, layer: LayerDesc):
    """Return ``(A, W)`` with shapes ``(B, R, K)`` and ``(B, K, N)``."""
    a = np.asarray(a)
    w = np.asarray(w)
    if layer.op == "matmul":
        if layer.chw_in:
            if a.ndim != 3:
                raise ShapeError("chw_in matmul expects a (C, H, W) input")
            a2 = a.reshape(a.shape[0], -1).T
        else:
            a2 = a.reshape(-1, a.shape[-1]) if a.ndim > 1 else a.reshape(1, -1)
        if w.ndim != 2 or w.shape[0] != a2.shape[1]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} x {w.shape}")
        return a2[None], w[None]
    if layer.op == "conv2d":
        if a.ndim != 3 or w.ndim != 4 or w.shape[1] != a.shape[0]:
            raise ShapeError(f"conv2d shape mismatch: {a.shape} * {w.shape}")
        cols = im2col(a, w.shape[2], w.shape[3], layer.stride, layer.padding)
        return cols[None], w.reshape(w.shape[0], -1).T[None]
    h = layer.heads
    if layer.op == "attn_score":
        # a = Q (M, D), w = K (M', D)
        if a.ndim != 2 or w.ndim != 2 or a.shape[1] != w.shape[1] or a.shape[1] % h:
            raise ShapeError(f"attention score shape mismatch: {a.shape} x {w.shape}")
        dh = a.shape[1] // h
        q = a.reshape(a.shape[0], h, dh).transpose(1, 0, 2)
        k = w.reshape(w.shape[0], h, dh).transpose(1, 2, 0)
        return q, k
    # attn_context: a = P (h, M, M'), w = V (M', D)
    if a.ndim != 3 or w.ndim != 2 or a.shape[0] != h or a.shape[2] != w.shape[0] or w.shape[1] % h:
        raise ShapeError(f"attention context shape mismatch: {a.shape} x {w.shape}")
    dh = w.shape[1] // h
    v = w.reshape(w.shape[0], h, dh).transpose(1, 0, 2)
    return a, v


def lower_activation(a: np.ndarray, w_shape: Sequence[int], layer: LayerDesc) -> np.ndarray:
    """Lower only the activation operand (used for operand statistics)."""
    return lower_operands(a, np.zeros(w_shape, dtype=np.int8), layer)[0]


def raise_output(out: np.ndarray, a_shape: Sequence[int], w_shape: Sequence[int],
                 layer: LayerDesc) -> np.ndarray:
    """Inverse of lowering for the ``(B, R, N)`` product."""
    if layer.op == "matmul":
        o = out[0]
        if layer.chw_out:
            if layer.hw is None:
                if not layer.chw_in:
                    raise ShapeError("chw_out needs hw or a chw input")
                hw = tuple(a_shape[1:])
            else:
                hw = layer.hw
            return o.T.reshape(o.shape[1], *hw)
        if layer.chw_in:
            return o
        return o.reshape(*a_shape[:-1], o.shape[-1]) if len(a_shape) > 1 else o.reshape(-1)
    if layer.op == "conv2d":
        ho, wo = conv_out_hw(a_shape[1:], w_shape[2:], layer.stride, layer.padding)
        return out[0].T.reshape(w_shape[0], ho, wo)
    if layer.op == "attn_score":
        return out
    return out.transpose(1, 0, 2).reshape(out.shape[1], -1)


def output_dims(a_shape, w_shape, layer: LayerDesc) -> tuple[int, ...]:
    a = np.zeros(a_shape, dtype=np.int8)
    w = np.zeros(w_shape, dtype=np.int8)
    A, W = lower_operands(a, w, layer)
    return tuple(raise_output(np.zeros((A.shape[0], A.shape[1], W.shape[2])), a_shape, w_shape, layer).shape)


def reduction_length(a_shape, w_shape, layer: LayerDesc) -> int:
    A, _ = lower_operands(np.zeros(a_shape, np.int8), np.zeros(w_shape, np.int8), layer)
    return int(A.shape[2])


def linear_float(a: np.ndarray, w: np.ndarray, layer: LayerDesc) -> np.ndarray:
    """Float64 evaluation of the same operator (used by the reference models)."""
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    A, W = lower_operands(a, w, layer)
    return raise_output(A @ W, a.shape, w.shape, layer)


def _int_product(A: np.ndarray, W: np.ndarray) -> np.ndarray:
    # int64 BLAS-free matmul; exact for any magnitudes seen here
    return np.matmul(A.astype(np.int64), W.astype(np.int64))


def direct_linear_wide(a: np.ndarray, w: np.ndarray, layer: LayerDesc = MATMUL) -> np.ndarray:
    """Exact product over arbitrary integer operands (int64 result, no range checks).

    This is the widened-operand entry point used when operands are sums or
    differences of int8 tensors.
    """
    a = np.asarray(a)
    w = np.asarray(w)
    A, W = lower_operands(a, w, layer)
    return raise_output(_int_product(A, W), a.shape, w.shape, layer)


def direct_linear(a: QuantTensor, w: QuantTensor, layer: LayerDesc = MATMUL) -> AccumTensor:
    A, W = lower_operands(a.values, w.values, layer)
    if A.shape[2] > MAX_REDUCTION:
        raise OverflowRisk(f"reduction length {A.shape[2]} exceeds {MAX_REDUCTION}")
    out = raise_output(_int_product(A, W), a.dims, w.dims, layer)
    return AccumTensor(out)
