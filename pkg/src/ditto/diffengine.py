"""Temporal/spatial differences and exact difference-domain execution.

A difference stream stores only non-zero elements, each as a sign and an
8-bit magnitude split into two nibbles. Products are formed from the two
nibble planes (``lo @ W + (hi @ W) << 4``), which is how a pair of 4-bit
multipliers plus a shifter realise one 8-bit multiply.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .qtensor import (
    AccumTensor,
    LayerDesc,
    MATMUL,
    QuantScale,
    QuantTensor,
    ShapeError,
    conv_out_hw,
    lower_operands,
    raise_output,
)

LOW_MAX = 15
DIFF_MAX = 254


class DiffClass(enum.IntEnum):
    ZERO = 0
    LOW = 1
    FULL = 2


class ExecMode(enum.Enum):
    DIRECT = "direct"
    TEMPORAL = "temporal"
    SPATIAL = "spatial"


class ScaleMismatch(ValueError):
    pass


class MissingPrevious(ValueError):
    pass


class ContextChanged(ValueError):
    pass


@dataclass(frozen=True)
class DiffCounts:
    n_zero: int
    n_low: int
    n_full: int

    @property
    def total(self) -> int:
        return self.n_zero + self.n_low + self.n_full

    @property
    def nonzero(self) -> int:
        return self.n_low + self.n_full

    def __iter__(self):
        return iter((self.n_zero, self.n_low, self.n_full))


@dataclass(frozen=True)
class DiffElement:
    sign: int
    mag_lo: int
    mag_hi: int
    cls: DiffClass
    index: int

    @property
    def value(self) -> int:
        return self.sign * (self.mag_hi * 16 + self.mag_lo)


def bit_requirement(delta: int) -> int:
    d = abs(int(delta))
    if d > DIFF_MAX:
        raise ValueError(f"difference {delta} outside [-254, 254]")
    return d.bit_length()


def bit_requirements(values: np.ndarray) -> np.ndarray:
    """Vectorised :func:`bit_requirement` (magnitude bits, 0 for zero)."""
    m = np.abs(np.asarray(values, dtype=np.int64))
    if m.size and m.max() > DIFF_MAX:
        raise ValueError("difference outside [-254, 254]")
    out = np.zeros(m.shape, dtype=np.int64)
    nz = m > 0
    out[nz] = np.floor(np.log2(m[nz])).astype(np.int64) + 1
    return out


def classify_values(delta: np.ndarray) -> np.ndarray:
    m = np.abs(np.asarray(delta, dtype=np.int64))
    cls = np.full(m.shape, DiffClass.FULL, dtype=np.uint8)
    cls[m <= LOW_MAX] = DiffClass.LOW
    cls[m == 0] = DiffClass.ZERO
    return cls


def count_classes(delta: np.ndarray) -> DiffCounts:
    m = np.abs(np.asarray(delta, dtype=np.int64))
    n_zero = int(np.count_nonzero(m == 0))
    n_low = int(np.count_nonzero((m > 0) & (m <= LOW_MAX)))
    return DiffCounts(n_zero, n_low, int(m.size) - n_zero - n_low)


@dataclass(frozen=True, eq=False)
class ClassifiedDiff:
    """Zero-elided, sign-magnitude encoded difference stream.

    ``index`` holds flat row-major positions into ``dims``; the stream is in
    ascending index order, which is also the accumulation order.
    """

    dims: tuple[int, ...]
    index: np.ndarray
    sign: np.ndarray
    mag_hi: np.ndarray
    mag_lo: np.ndarray
    cls: np.ndarray
    counts: DiffCounts
    scale: QuantScale

    @classmethod
    def from_delta(cls, delta: np.ndarray, scale: QuantScale) -> "ClassifiedDiff":
        d = np.asarray(delta, dtype=np.int64)
        flat = d.reshape(-1)
        if flat.size and np.abs(flat).max() > DIFF_MAX:
            raise ValueError("difference outside [-254, 254]")
        idx = np.flatnonzero(flat)
        v = flat[idx]
        mag = np.abs(v)
        arrays = dict(
            index=idx.astype(np.int64),
            sign=np.where(v < 0, -1, 1).astype(np.int8),
            mag_hi=(mag >> 4).astype(np.uint8),
            mag_lo=(mag & 0xF).astype(np.uint8),
            cls=np.where(mag <= LOW_MAX, DiffClass.LOW, DiffClass.FULL).astype(np.uint8),
        )
        for a in arrays.values():
            a.setflags(write=False)
        n_low = int(np.count_nonzero(arrays["cls"] == DiffClass.LOW))
        counts = DiffCounts(int(flat.size - idx.size), n_low, int(idx.size) - n_low)
        return cls(tuple(d.shape), counts=counts, scale=scale, **arrays)

    def __len__(self):
        return int(self.index.size)

    def elements(self) -> Iterator[DiffElement]:
        for i, s, hi, lo, c in zip(self.index, self.sign, self.mag_hi, self.mag_lo, self.cls):
            yield DiffElement(int(s), int(lo), int(hi), DiffClass(int(c)), int(i))

    def nibble_planes(self) -> tuple[np.ndarray, np.ndarray]:
        """Signed dense low and high nibble planes (high plane not yet shifted)."""
        n = int(np.prod(self.dims, dtype=np.int64))
        lo = np.zeros(n, dtype=np.int64)
        hi = np.zeros(n, dtype=np.int64)
        s = self.sign.astype(np.int64)
        lo[self.index] = s * self.mag_lo
        hi[self.index] = s * self.mag_hi
        return lo.reshape(self.dims), hi.reshape(self.dims)

    def dense(self) -> np.ndarray:
        lo, hi = self.nibble_planes()
        return hi * 16 + lo


def _check_same(cur: QuantTensor, prev: QuantTensor):
    if cur.scale != prev.scale:
        raise ScaleMismatch(
            f"scale mismatch {cur.scale.value} vs {prev.scale.value}: differences would not be exact")
    if cur.dims != prev.dims:
        raise ShapeError(f"dims mismatch {cur.dims} vs {prev.dims}")


def temporal_diff(cur: QuantTensor, prev: QuantTensor) -> ClassifiedDiff:
    _check_same(cur, prev)
    delta = cur.values.astype(np.int64) - prev.values.astype(np.int64)
    return ClassifiedDiff.from_delta(delta, cur.scale)


def bops(counts, macs_per_element: int, w_bits: int = 8, direct: bool = False) -> int:
    n_zero, n_low, n_full = counts
    if direct:
        return (n_zero + n_low + n_full) * macs_per_element * 8 * w_bits
    return (n_low * 4 + n_full * 8) * macs_per_element * w_bits


# --------------------------------------------------------------------------
# Difference-domain products
# --------------------------------------------------------------------------

def _planes_product(lo: np.ndarray, hi: np.ndarray, other: np.ndarray, layer: LayerDesc,
                    stream_is_weight: bool = False) -> np.ndarray:
    """Exact product of a nibble-split stream with a dense operand (int64)."""
    other = np.asarray(other, dtype=np.int64)
    if stream_is_weight:
        A, Wlo = lower_operands(other, lo, layer)
        _, Whi = lower_operands(other, hi, layer)
        prod = np.matmul(A, Wlo) + (np.matmul(A, Whi) << 4)
        return raise_output(prod, other.shape, lo.shape, layer)
    Alo, W = lower_operands(lo, other, layer)
    Ahi, _ = lower_operands(hi, other, layer)
    prod = np.matmul(Alo, W) + (np.matmul(Ahi, W) << 4)
    return raise_output(prod, lo.shape, other.shape, layer)


def stream_product(d: ClassifiedDiff, other: np.ndarray, layer: LayerDesc = MATMUL,
                   stream_is_weight: bool = False) -> np.ndarray:
    lo, hi = d.nibble_planes()
    return _planes_product(lo, hi, other, layer, stream_is_weight)


def diff_linear(dA: ClassifiedDiff, w: QuantTensor, prev_out: Optional[AccumTensor],
                layer: LayerDesc = MATMUL) -> AccumTensor:
    if prev_out is None:
        raise MissingPrevious("difference processing needs the previous step output")
    delta_out = stream_product(dA, w.values, layer)
    if delta_out.shape != prev_out.dims:
        raise ShapeError(f"output dims {delta_out.shape} do not match previous {prev_out.dims}")
    return AccumTensor(prev_out.values.astype(np.int64) + delta_out)


def diff_attention(a_t: QuantTensor, b_t: QuantTensor, a_prev: QuantTensor, b_prev: QuantTensor,
                   prev_out: Optional[AccumTensor], layer: LayerDesc) -> AccumTensor:
    """Two sub-operation update of a product of two changing operands.

    ``f(a_t, b_t) = f(a_prev, b_prev) + f(a_t, db) + f(da, b_prev)``; the
    current ``a_t`` is used as the weight of the ``db`` term, which absorbs the
    ``da * db`` cross term.
    """
    if prev_out is None:
        raise MissingPrevious("attention difference processing needs the previous output")
    da = temporal_diff(a_t, a_prev)
    db = temporal_diff(b_t, b_prev)
    term_b = stream_product(db, a_t.values, layer, stream_is_weight=True)
    term_a = stream_product(da, b_prev.values, layer)
    if term_a.shape != prev_out.dims:
        raise ShapeError(f"output dims {term_a.shape} do not match previous {prev_out.dims}")
    return AccumTensor(prev_out.values.astype(np.int64) + term_a + term_b)


def diff_attention_scores(q_t: QuantTensor, k_t: QuantTensor, q_prev: QuantTensor,
                          k_prev: QuantTensor, prev_scores: Optional[AccumTensor],
                          heads: int = 1) -> AccumTensor:
    return diff_attention(q_t, k_t, q_prev, k_prev, prev_scores, LayerDesc("attn_score", heads=heads))


def diff_attention_context(p_t: QuantTensor, v_t: QuantTensor, p_prev: QuantTensor,
                           v_prev: QuantTensor, prev_context: Optional[AccumTensor],
                           heads: int = 1) -> AccumTensor:
    return diff_attention(p_t, v_t, p_prev, v_prev, prev_context, LayerDesc("attn_context", heads=heads))


def check_constant(cur: QuantTensor, prev: QuantTensor, what: str = "context"):
    if cur != prev:
        raise ContextChanged(
            f"{what} changed between steps; use diff_attention for changing operands")


def cross_attention_constant_context(dq: ClassifiedDiff, dp: ClassifiedDiff,
                                     k_ctx: QuantTensor, v_ctx: QuantTensor,
                                     k_ctx_prev: QuantTensor, v_ctx_prev: QuantTensor,
                                     prev_scores: Optional[AccumTensor],
                                     prev_context: Optional[AccumTensor],
                                     heads: int = 1) -> tuple[AccumTensor, AccumTensor]:
    """Cross attention where K and V come from a step-invariant context."""
    check_constant(k_ctx, k_ctx_prev, "context keys")
    check_constant(v_ctx, v_ctx_prev, "context values")
    scores = diff_linear(dq, k_ctx, prev_scores, LayerDesc("attn_score", heads=heads))
    context = diff_linear(dp, v_ctx, prev_context, LayerDesc("attn_context", heads=heads))
    return scores, context


# --------------------------------------------------------------------------
# Spatial differences
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpatialDiff:
    """Row differences of a lowered ``(B, R, K)`` operand.

    ``base_rows`` are kept dense; every other row ``r`` is stored as
    ``row[r] - row[r-1]`` in ``diff`` (dims ``(B, R - len(base_rows), K)``).
    """

    lowered_dims: tuple[int, int, int]
    base_rows: tuple[int, ...]
    base: np.ndarray
    diff: ClassifiedDiff

    @property
    def diff_rows(self) -> tuple[int, ...]:
        b = set(self.base_rows)
        return tuple(r for r in range(self.lowered_dims[1]) if r not in b)

    @property
    def base_elements(self) -> int:
        return int(self.base.size)

    def reconstruct(self) -> np.ndarray:
        B, R, K = self.lowered_dims
        out = np.zeros((B, R, K), dtype=np.int64)
        d = self.diff.dense()
        base_pos = {r: i for i, r in enumerate(self.base_rows)}
        j = 0
        for r in range(R):
            if r in base_pos:
                out[:, r] = self.base[:, base_pos[r]]
            else:
                out[:, r] = out[:, r - 1] + d[:, j]
                j += 1
        return out


def _base_rows(layer: LayerDesc, rows: int, a_shape, w_shape) -> tuple[int, ...]:
    if layer.op == "conv2d":
        _, wo = conv_out_hw(a_shape[1:], w_shape[2:], layer.stride, layer.padding)
        return tuple(range(0, rows, wo))
    return (0,) if rows else ()


def spatial_diff(a: QuantTensor, layer: LayerDesc = MATMUL,
                 w_shape: Optional[Sequence[int]] = None) -> SpatialDiff:
    """Adjacent-row (or adjacent-window for conv) differences of the lowered input."""
    if w_shape is None:
        if layer.op == "conv2d":
            raise ShapeError("conv2d spatial differences need the kernel shape")
        w_shape = _dummy_w_shape(a.dims, layer)
    A, _ = lower_operands(a.values, np.zeros(tuple(w_shape), dtype=np.int8), layer)
    A = A.astype(np.int64)
    B, R, K = A.shape
    bases = _base_rows(layer, R, a.dims, w_shape)
    drows = [r for r in range(R) if r not in set(bases)]
    if drows:
        idx = np.asarray(drows)
        delta = A[:, idx] - A[:, idx - 1]
    else:
        delta = np.zeros((B, 0, K), dtype=np.int64)
    base = A[:, list(bases)] if bases else np.zeros((B, 0, K), dtype=np.int64)
    base.setflags(write=False)
    return SpatialDiff((B, R, K), bases, base, ClassifiedDiff.from_delta(delta, a.scale))


def _dummy_w_shape(a_dims, layer: LayerDesc):
    if layer.op == "matmul":
        k = a_dims[0] if layer.chw_in else a_dims[-1]
        return (k, 1)
    if layer.op == "attn_score":
        return (1, a_dims[1])
    return (a_dims[2], layer.heads)


def spatial_linear(sd: SpatialDiff, a_shape: Sequence[int], w: QuantTensor,
                   layer: LayerDesc = MATMUL) -> AccumTensor:
    """Row-recurrent product: base rows directly, later rows as prev row + d*W."""
    _, W = lower_operands(np.zeros(tuple(a_shape), dtype=np.int8), w.values, layer)
    W = W.astype(np.int64)
    B, R, K = sd.lowered_dims
    lo, hi = sd.diff.nibble_planes()
    d_prod = np.matmul(lo, W) + (np.matmul(hi, W) << 4)
    base_prod = np.matmul(sd.base.astype(np.int64), W)
    out = np.zeros((B, R, W.shape[2]), dtype=np.int64)
    base_pos = {r: i for i, r in enumerate(sd.base_rows)}
    j = 0
    for r in range(R):
        if r in base_pos:
            out[:, r] = base_prod[:, base_pos[r]]
        else:
            out[:, r] = out[:, r - 1] + d_prod[:, j]
            j += 1
    return AccumTensor(raise_output(out, a_shape, w.dims, layer))
