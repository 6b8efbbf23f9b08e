"""Similarity, value-range, bit-width and BOPs statistics of a trace."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .diffengine import DiffCounts, ExecMode, bit_requirements, count_classes, spatial_diff
from .flow import NodeKind
from .hwsim import Workload, bops_of, mac_split
from .qtensor import dequantize, im2col, lower_activation
from .refmodel import Trace
from .replay import QuantizedTrace

BUCKETS = ("0", "1-4", "5-8")


def cosine(a, b) -> float:
    """Cosine similarity; 0.0 when either vector is all zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"cosine of tensors with different sizes {a.size} and {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _row_cosines(m: np.ndarray) -> tuple[list[float], int]:
    """Cosines of adjacent rows; pairs involving a zero row are skipped and counted."""
    m = np.asarray(m, dtype=np.float64)
    out, skipped = [], 0
    for r in range(m.shape[0] - 1):
        if not m[r].any() or not m[r + 1].any():
            skipped += 1
            continue
        out.append(cosine(m[r], m[r + 1]))
    return out, skipped


def _mean(xs) -> Optional[float]:
    xs = list(xs)
    return float(np.mean(xs)) if xs else None


@dataclass
class SimilarityReport:
    temporal: dict = field(default_factory=dict)   # (layer, step) -> cosine vs step-1
    row: dict = field(default_factory=dict)        # layer -> mean adjacent-row cosine
    window: dict = field(default_factory=dict)     # conv layer -> mean adjacent-window cosine
    excluded: int = 0

    @property
    def temporal_mean(self) -> Optional[float]:
        return _mean(self.temporal.values())

    @property
    def row_mean(self) -> Optional[float]:
        return _mean(self.row.values())

    @property
    def window_mean(self) -> Optional[float]:
        return _mean(self.window.values())

    @property
    def spatial_mean(self) -> Optional[float]:
        return _mean(list(self.row.values()) + list(self.window.values()))

    def rows(self, model: str):
        for (l, k), v in sorted(self.temporal.items()):
            yield model, l, k, "temporal_cosine", v
        for l, v in sorted(self.row.items()):
            yield model, l, "", "row_cosine", v
        for l, v in sorted(self.window.items()):
            yield model, l, "", "window_cosine", v

    def summary(self) -> dict:
        return {"temporal_mean": self.temporal_mean, "row_mean": self.row_mean,
                "window_mean": self.window_mean, "spatial_mean": self.spatial_mean,
                "excluded_zero_pairs": self.excluded}


def similarity_report(trace: Trace) -> SimilarityReport:
    g = trace.graph
    rep = SimilarityReport()
    for l in g.linear_ids:
        n = g[l]
        src = n.inputs[0]
        rows, wins = [], []
        for k in range(1, trace.steps + 1):
            x = np.asarray(trace.output(k, src), dtype=np.float64)
            if k >= 2:
                prev = np.asarray(trace.output(k - 1, src), dtype=np.float64)
                if x.any() and prev.any():
                    rep.temporal[(l, k)] = cosine(x, prev)
                else:
                    rep.excluded += 1
            if n.kind == NodeKind.CONV:
                c = x.shape[0]
                cs, s1 = _row_cosines(x.reshape(c, -1).T)
                kh, kw = n.weight.shape[2:]
                cols = im2col(x, kh, kw, n.params.get("stride", 1), n.params.get("padding", 0))
                wo = (x.shape[2] + 2 * n.params.get("padding", 0) - kw) // n.params.get("stride", 1) + 1
                ws, s2 = [], 0
                for r0 in range(0, cols.shape[0], wo):
                    part, s = _row_cosines(cols[r0:r0 + wo])
                    ws += part
                    s2 += s
                wins += ws
                rep.excluded += s1 + s2
            else:
                A = lower_activation(x, _w_shape(trace, l), n.desc())
                cs = []
                for b in range(A.shape[0]):
                    part, s = _row_cosines(A[b])
                    cs += part
                    rep.excluded += s
            rows += cs
        if rows:
            rep.row[l] = _mean(rows)
        if wins:
            rep.window[l] = _mean(wins)
    return rep


def _w_shape(trace: Trace, l: int):
    n = trace.graph[l]
    return n.weight.shape if n.weight is not None else trace.graph[n.inputs[1]].dims


@dataclass
class RangeReport:
    act: dict = field(default_factory=dict)   # (layer, step) -> max - min
    diff: dict = field(default_factory=dict)  # (layer, step) -> max - min, steps >= 2

    def ratio(self, layer: int, step: int) -> Optional[float]:
        d = self.diff.get((layer, step))
        if not d:
            return None
        return self.act[(layer, step)] / d

    def layer_ratio(self, layer: int) -> Optional[float]:
        """Mean activation range over mean temporal-diff range."""
        steps = [k for (l, k) in self.diff if l == layer]
        if not steps:
            return None
        d = float(np.mean([self.diff[(layer, k)] for k in steps]))
        if d == 0:
            return None
        return float(np.mean([self.act[(layer, k)] for k in steps])) / d

    @property
    def layers(self) -> list[int]:
        return sorted({l for l, _ in self.act})

    def fraction_narrower(self) -> float:
        rs = [self.layer_ratio(l) for l in self.layers]
        return sum(1 for r in rs if r is None or r > 1) / len(rs) if rs else 0.0

    def rows(self, model: str):
        for (l, k), v in sorted(self.act.items()):
            yield model, l, k, "activation_range", v
            if (l, k) in self.diff:
                yield model, l, k, "diff_range", self.diff[(l, k)]
                yield model, l, k, "range_ratio", self.ratio(l, k)

    def summary(self) -> dict:
        rs = {l: self.layer_ratio(l) for l in self.layers}
        defined = [r for r in rs.values() if r is not None]
        return {"mean_layer_ratio": _mean(defined), "fraction_layers_narrower": self.fraction_narrower(),
                "layer_ratio": {str(l): r for l, r in rs.items()}}


def _span(x: np.ndarray) -> float:
    return float(x.max() - x.min()) if x.size else 0.0


def range_report(qt: QuantizedTrace) -> RangeReport:
    rep = RangeReport()
    for l in qt.graph.linear_ids:
        src = qt.graph[l].inputs[0]
        for k in range(1, qt.steps + 1):
            a = qt.tensor(k, src)
            rep.act[(l, k)] = _span(dequantize(a))
            if k >= 2:
                prev = qt.tensor(k - 1, src)
                d = (a.values.astype(np.int64) - prev.values.astype(np.int64)) * a.scale.value
                rep.diff[(l, k)] = _span(d)
    return rep


@dataclass(frozen=True)
class BitwidthHistogram:
    counts: tuple  # elements per bucket: 0 bits, 1-4 bits, 5-8 bits

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def fractions(self) -> tuple:
        t = self.total
        return tuple(c / t for c in self.counts) if t else (0.0, 0.0, 0.0)

    def __add__(self, other: "BitwidthHistogram") -> "BitwidthHistogram":
        return BitwidthHistogram(tuple(a + b for a, b in zip(self.counts, other.counts)))

    @classmethod
    def empty(cls) -> "BitwidthHistogram":
        return cls((0, 0, 0))

    @classmethod
    def from_counts(cls, c: DiffCounts) -> "BitwidthHistogram":
        # class boundaries (|v| <= 15 / >= 16) are exactly the 4-bit / 5-bit boundary
        return cls((c.n_zero, c.n_low, c.n_full))


def bitwidth_histogram(values) -> BitwidthHistogram:
    bits = bit_requirements(np.asarray(values, dtype=np.int64))
    return BitwidthHistogram((int((bits == 0).sum()), int(((bits >= 1) & (bits <= 4)).sum()),
                              int((bits >= 5).sum())))


@dataclass
class TraceHistograms:
    activation: BitwidthHistogram
    temporal: BitwidthHistogram
    spatial: BitwidthHistogram

    def rows(self, model: str):
        for name in ("activation", "temporal", "spatial"):
            for b, f in zip(BUCKETS, getattr(self, name).fractions):
                yield model, "", "", f"{name}_bits_{b}", f

    def summary(self) -> dict:
        return {name: dict(zip(BUCKETS, getattr(self, name).fractions))
                for name in ("activation", "temporal", "spatial")}


def trace_histograms(qt: QuantizedTrace, first_step: int = 2) -> TraceHistograms:
    """Bucketed bit widths of layer inputs, temporal diffs and spatial diffs (steps >= first_step)."""
    act = tmp = spa = BitwidthHistogram.empty()
    for l in qt.graph.linear_ids:
        n = qt.graph[l]
        for k in range(first_step, qt.steps + 1):
            a = qt.tensor(k, n.inputs[0])
            act = act + bitwidth_histogram(a.values)
            if k >= 2:
                prev = qt.tensor(k - 1, n.inputs[0])
                tmp = tmp + BitwidthHistogram.from_counts(
                    count_classes(a.values.astype(np.int64) - prev.values.astype(np.int64)))
            sd = spatial_diff(a, n.desc(), qt.weight_shape(l))
            spa = spa + BitwidthHistogram.from_counts(sd.diff.counts)
    return TraceHistograms(act, tmp, spa)


@dataclass
class BopsTable:
    per_step: dict = field(default_factory=dict)  # step -> {mode: bops}

    def relative(self, mode: ExecMode, step: Optional[int] = None) -> float:
        steps = [step] if step is not None else sorted(self.per_step)
        num = sum(self.per_step[k][mode] for k in steps)
        den = sum(self.per_step[k][ExecMode.DIRECT] for k in steps)
        return num / den if den else 0.0

    def rows(self, model: str):
        for k in sorted(self.per_step):
            for m in ExecMode:
                yield model, "", k, f"relative_bops_{m.value}", self.relative(m, k)

    def summary(self) -> dict:
        return {m.value: self.relative(m) for m in ExecMode} if self.per_step else {}


def relative_bops(workload: Workload, modes: Iterable[ExecMode] = tuple(ExecMode)) -> BopsTable:
    """BOPs of each mode relative to Direct, over steps where temporal diffs exist."""
    tab = BopsTable()
    modes = set(modes) | {ExecMode.DIRECT}
    for k in range(2, workload.steps + 1):
        tab.per_step[k] = {m: sum(bops_of(mac_split(workload[(k, l)], m)) for l in workload.layers)
                           for m in modes}
    return tab


def long_csv(rows: Iterable[tuple], extra: Optional[dict] = None) -> str:
    extra = extra or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "layer", "step", "metric", "value"] + list(extra))
    for r in rows:
        v = r[4]
        w.writerow(list(r[:4]) + ["" if v is None else (repr(float(v)) if isinstance(v, float) else v)]
                   + list(extra.values()))
    return buf.getvalue()


def _finite(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x
