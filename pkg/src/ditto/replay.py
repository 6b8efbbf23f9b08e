"""Quantized view of a trace and exact replay of execution plans.

Scales are static per tensor, calibrated once from the first sampler step;
weights get their own absmax scale. Every linear layer at every step can then
be evaluated through any execution mode and compared with the direct path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diffengine import (
    ExecMode,
    check_constant,
    diff_attention,
    diff_linear,
    spatial_diff,
    spatial_linear,
    temporal_diff,
)
from .flow import LayerGraph, LayerNode
from .qtensor import AccumTensor, QuantScale, QuantTensor, calibrate_scale, direct_linear, quantize
from .refmodel import Trace


class QuantizedTrace:
    """Int8 operands of every linear layer at every step."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.graph: LayerGraph = trace.graph
        g = self.graph
        self.scales: dict[int, QuantScale] = {}
        self.weights: dict[int, QuantTensor] = {}
        producers = set()
        for i in g.order:
            n = g[i]
            if not n.is_linear:
                continue
            if n.weight is not None:
                self.weights[i] = quantize(n.weight, calibrate_scale(n.weight))
            producers.update(n.inputs)
        if trace.steps:
            for p in sorted(producers):
                self.scales[p] = calibrate_scale(trace.output(1, p))
        self._cache: dict[tuple[int, int], QuantTensor] = {}

    @property
    def steps(self) -> int:
        return self.trace.steps

    def tensor(self, step: int, node: int) -> QuantTensor:
        key = (step, node)
        if key not in self._cache:
            self._cache[key] = quantize(self.trace.output(step, node), self.scales[node])
        return self._cache[key]

    def operands(self, step: int, layer: int) -> tuple[QuantTensor, QuantTensor]:
        """``(activation, weight)``; attention layers use their second input as weight."""
        n = self.graph[layer]
        a = self.tensor(step, n.inputs[0])
        w = self.weights[layer] if n.weight is not None else self.tensor(step, n.inputs[1])
        return a, w

    def weight_shape(self, layer: int) -> tuple[int, ...]:
        n = self.graph[layer]
        if n.weight is not None:
            return tuple(n.weight.shape)
        return tuple(self.graph[n.inputs[1]].dims)


def direct_step(qt: QuantizedTrace, step: int, layer: int) -> AccumTensor:
    a, w = qt.operands(step, layer)
    return direct_linear(a, w, qt.graph[layer].desc())


def mode_step(qt: QuantizedTrace, step: int, layer: int, mode: ExecMode,
              prev_out: Optional[AccumTensor]) -> AccumTensor:
    """Evaluate one layer at one step through ``mode``."""
    n: LayerNode = qt.graph[layer]
    desc = n.desc()
    a, w = qt.operands(step, layer)
    if mode == ExecMode.DIRECT:
        return direct_linear(a, w, desc)
    if mode == ExecMode.SPATIAL:
        sd = spatial_diff(a, desc, qt.weight_shape(layer))
        return spatial_linear(sd, a.dims, w, desc)
    if step < 2:
        raise ValueError("temporal differences need a previous step")
    a_prev, w_prev = qt.operands(step - 1, layer)
    if n.weight is not None:
        return diff_linear(temporal_diff(a, a_prev), w, prev_out, desc)
    if n.inputs[1] in qt.graph.constant:
        # constant context operand acts as a weight
        check_constant(w, w_prev)
        return diff_linear(temporal_diff(a, a_prev), w, prev_out, desc)
    return diff_attention(a, w, a_prev, w_prev, prev_out, desc)


@dataclass
class ReplayResult:
    checked: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def exact(self) -> bool:
        return not self.mismatches

    @property
    def verdict(self) -> str:
        return "exact" if self.exact else "mismatch"


def replay(qt: QuantizedTrace, plan: dict) -> ReplayResult:
    """Run ``plan`` (step -> {layer: mode}) and compare each output with the direct path.

    The previous-step output handed to temporal layers is whatever the plan
    produced, so errors would propagate rather than be masked.
    """
    res = ReplayResult()
    prev: dict[int, AccumTensor] = {}
    for k in range(1, qt.steps + 1):
        for layer, mode in plan.get(k, {}).items():
            out = mode_step(qt, k, layer, mode, prev.get(layer))
            ref = direct_step(qt, k, layer)
            res.checked += 1
            if out != ref:
                res.mismatches.append((k, layer, mode.value))
            prev[layer] = out
    return res


def all_modes_plan(qt: QuantizedTrace, mode: ExecMode) -> dict:
    layers = qt.graph.linear_ids
    plan = {}
    for k in range(1, qt.steps + 1):
        m = ExecMode.DIRECT if (mode == ExecMode.TEMPORAL and k == 1) else mode
        plan[k] = {l: m for l in layers}
    return plan


class QuantizedExecutor:
    """Linear-layer callback for :func:`refmodel.forward` running int8 kernels.

    Activations are quantized with fixed per-tensor scales, the accumulator is
    produced by the mode the plan assigns, and the result is dequantized.
    ``plan`` maps step -> {layer: mode}; missing entries run directly.
    """

    def __init__(self, graph: LayerGraph, scales: dict[int, QuantScale], plan: Optional[dict] = None):
        self.graph = graph
        self.scales = scales
        self.plan = plan or {}
        self.step = 0
        self.weights = {i: quantize(graph[i].weight, calibrate_scale(graph[i].weight))
                        for i in graph.order if graph[i].is_linear and graph[i].weight is not None}
        self.prev_in: dict[int, tuple] = {}
        self.prev_out: dict[int, AccumTensor] = {}

    def begin_step(self):
        self.step += 1

    def __call__(self, node: LayerNode, operands: list) -> np.ndarray:
        i = node.id
        desc = node.desc()
        a = quantize(operands[0], self.scales[node.inputs[0]])
        w = self.weights[i] if node.weight is not None else quantize(operands[1], self.scales[node.inputs[1]])
        mode = self.plan.get(self.step, {}).get(i, ExecMode.DIRECT)
        if mode == ExecMode.TEMPORAL and i in self.prev_out:
            a_prev, w_prev = self.prev_in[i]
            if node.weight is not None or node.inputs[1] in self.graph.constant:
                acc = diff_linear(temporal_diff(a, a_prev), w, self.prev_out[i], desc)
            else:
                acc = diff_attention(a, w, a_prev, w_prev, self.prev_out[i], desc)
        elif mode == ExecMode.SPATIAL:
            acc = spatial_linear(spatial_diff(a, desc, w.dims), a.dims, w, desc)
        else:
            acc = direct_linear(a, w, desc)
        self.prev_in[i] = (a, w)
        self.prev_out[i] = acc
        return acc.values.astype(np.float64) * (a.scale.value * w.scale.value)
