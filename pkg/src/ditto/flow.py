"""Layer graphs, diff-domain materialization analysis, and the Defo controller.

Steps are numbered in execution order: step 1 is the first denoising
iteration (noisiest input), step T the last.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .diffengine import ExecMode
from .qtensor import LayerDesc

MAX_NODES = 512
DEFO_ENTRIES = 512
CYCLE_FIELD_MAX = 2**16 - 1
DEFO_ENTRY_BITS = 33


class GraphError(ValueError):
    pass


class DefoError(ValueError):
    pass


class NodeKind(enum.Enum):
    INPUT = "input"
    CONV = "conv"
    FC = "fc"
    ATTN_SCORE = "attn_score"
    ATTN_CONTEXT = "attn_context"
    ADD = "add"
    CONCAT = "concat"
    SPLIT = "split"
    NONLINEAR = "nonlinear"


class NonLinearKind(enum.Enum):
    SILU = "silu"
    GELU = "gelu"
    SOFTMAX = "softmax"
    GROUPNORM = "groupnorm"
    LAYERNORM = "layernorm"
    QUANT = "quant"
    DEQUANT = "dequant"


LINEAR_KINDS = frozenset({NodeKind.CONV, NodeKind.FC, NodeKind.ATTN_SCORE, NodeKind.ATTN_CONTEXT})

_FAN_IN = {
    NodeKind.INPUT: (0, 0),
    NodeKind.CONV: (1, 1),
    NodeKind.FC: (1, 1),
    NodeKind.ATTN_SCORE: (2, 2),
    NodeKind.ATTN_CONTEXT: (2, 2),
    NodeKind.ADD: (2, None),
    NodeKind.CONCAT: (2, None),
    NodeKind.SPLIT: (1, 1),
    NodeKind.NONLINEAR: (1, 1),
}

# u8 codes used by the trace file; nonlinear sub-kinds get their own codes.
KIND_CODES: dict[tuple, int] = {
    (NodeKind.INPUT, None): 0,
    (NodeKind.CONV, None): 1,
    (NodeKind.FC, None): 2,
    (NodeKind.ATTN_SCORE, None): 3,
    (NodeKind.ATTN_CONTEXT, None): 4,
    (NodeKind.ADD, None): 5,
    (NodeKind.CONCAT, None): 6,
    (NodeKind.SPLIT, None): 7,
    **{(NodeKind.NONLINEAR, s): 8 + i for i, s in enumerate(NonLinearKind)},
}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


@dataclass(eq=False)
class LayerNode:
    id: int
    kind: NodeKind
    inputs: tuple[int, ...] = ()
    dims: tuple[int, ...] = ()
    sub: Optional[NonLinearKind] = None
    weight: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)
    name: str = ""

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    @property
    def code(self) -> int:
        return KIND_CODES[(self.kind, self.sub)]

    def desc(self) -> LayerDesc:
        p = self.params
        if self.kind == NodeKind.CONV:
            return LayerDesc("conv2d", stride=p.get("stride", 1), padding=p.get("padding", 0))
        if self.kind == NodeKind.FC:
            hw = p.get("hw")
            return LayerDesc("matmul", chw_in=p.get("chw_in", False), chw_out=p.get("chw_out", False),
                             hw=tuple(hw) if hw else None)
        if self.kind == NodeKind.ATTN_SCORE:
            return LayerDesc("attn_score", heads=p.get("heads", 1))
        if self.kind == NodeKind.ATTN_CONTEXT:
            return LayerDesc("attn_context", heads=p.get("heads", 1))
        raise GraphError(f"node {self.id} ({self.kind.value}) is not linear")

    @property
    def label(self) -> str:
        k = self.sub.value if self.sub else self.kind.value
        return self.name or f"{k}{self.id}"


class LayerGraph:
    """Acyclic dataflow graph; node ``inputs`` are ordered producer ids."""

    def __init__(self, nodes: Iterable[LayerNode], output: Optional[int] = None):
        self.nodes: dict[int, LayerNode] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise GraphError(f"duplicate node id {n.id}")
            self.nodes[n.id] = n
        if len(self.nodes) > MAX_NODES:
            raise GraphError(f"graph has {len(self.nodes)} nodes; at most {MAX_NODES} supported")
        for n in self.nodes.values():
            lo, hi = _FAN_IN[n.kind]
            k = len(n.inputs)
            if k < lo or (hi is not None and k > hi):
                raise GraphError(f"node {n.id} ({n.kind.value}) has fan-in {k}")
            if n.kind == NodeKind.NONLINEAR and n.sub is None:
                raise GraphError(f"nonlinear node {n.id} needs a sub-kind")
            if n.kind in (NodeKind.CONV, NodeKind.FC) and n.weight is None:
                raise GraphError(f"linear node {n.id} has no weight")
            for p in n.inputs:
                if p not in self.nodes:
                    raise GraphError(f"node {n.id} reads unknown node {p}")
        self.order = self._toposort()
        self.consumers: dict[int, list[int]] = {i: [] for i in self.nodes}
        for i in self.order:
            for p in self.nodes[i].inputs:
                if i not in self.consumers[p]:
                    self.consumers[p].append(i)
        self.output = output if output is not None else self.order[-1]
        self.constant = self._constant_nodes()

    def _toposort(self) -> list[int]:
        indeg = {i: len(set(n.inputs)) for i, n in self.nodes.items()}
        users: dict[int, set] = {i: set() for i in self.nodes}
        for i, n in self.nodes.items():
            for p in set(n.inputs):
                users[p].add(i)
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for u in sorted(users[i]):
                indeg[u] -= 1
                if indeg[u] == 0:
                    ready.append(u)
            ready.sort()
        if len(order) != len(self.nodes):
            raise GraphError("graph contains a cycle")
        return order

    def _constant_nodes(self) -> frozenset:
        const = set()
        for i in self.order:
            n = self.nodes[i]
            if n.kind == NodeKind.INPUT:
                if n.params.get("const"):
                    const.add(i)
            elif n.inputs and all(p in const for p in n.inputs):
                const.add(i)
        return frozenset(const)

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, i) -> LayerNode:
        return self.nodes[i]

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, i) for i in self.order for p in dict.fromkeys(self.nodes[i].inputs)]

    @property
    def linear_ids(self) -> list[int]:
        """Linear nodes that execute every step (constant sub-graphs excluded)."""
        return [i for i in self.order if self.nodes[i].is_linear and i not in self.constant]

    def activation_ports(self, i: int) -> list[int]:
        """Producer ids feeding ``i`` with step-varying data."""
        return [p for p in self.nodes[i].inputs if p not in self.constant]

    def kinds(self) -> set:
        out = set()
        for n in self.nodes.values():
            out.add(n.sub if n.sub else n.kind)
        return out

    def to_dict(self) -> dict:
        return {
            "output": self.output,
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind.value,
                    "sub": n.sub.value if n.sub else None,
                    "name": n.name,
                    "inputs": list(n.inputs),
                    "dims": list(n.dims),
                    "params": n.params,
                    "weight_shape": list(n.weight.shape) if n.weight is not None else None,
                }
                for n in (self.nodes[i] for i in self.order)
            ],
        }


# --------------------------------------------------------------------------
# Materialization analysis
# --------------------------------------------------------------------------

class Domain(enum.Enum):
    DIFF = "diff"
    VALUE = "value"


@dataclass(frozen=True)
class MaterializationPlan:
    edge_domain: Mapping[tuple[int, int], Domain]
    computes_diff: frozenset
    needs_diff_calc: Mapping[int, bool]
    needs_summation: Mapping[int, bool]
    summation_owner: Mapping[int, int]

    @property
    def boundary_count(self) -> int:
        return sum(self.needs_diff_calc.values()) + sum(self.needs_summation.values())

    def to_dict(self) -> dict:
        return {
            "edges": [{"src": u, "dst": v, "domain": d.value} for (u, v), d in sorted(self.edge_domain.items())],
            "diff_nodes": sorted(self.computes_diff),
            "diff_calc": sorted(i for i, b in self.needs_diff_calc.items() if b),
            "summation": sorted(i for i, b in self.needs_summation.items() if b),
        }


def analyze_graph(g: LayerGraph, diff_layers: Optional[Iterable[int]] = None,
                  transparent: Iterable[NonLinearKind] = ()) -> MaterializationPlan:
    """Greatest fixed point of the diff-domain regions.

    ``diff_layers`` are the linear nodes executing on temporal differences
    (default: every step-varying linear node). Add nodes join a region only
    when all their inputs arrive as differences. ``transparent`` nonlinear
    kinds behave like Add (used to model sign-mask dataflows).
    """
    D = set(g.linear_ids if diff_layers is None else diff_layers)
    transparent = frozenset(transparent)
    const = g.constant

    def passthrough(n: LayerNode) -> bool:
        return n.kind == NodeKind.ADD or (n.kind == NodeKind.NONLINEAR and n.sub in transparent)

    diff_nodes = {i for i in g.order if i not in const and (i in D or passthrough(g[i]))}

    def edge_diff(u: int, v: int) -> bool:
        return u in diff_nodes and all(c in diff_nodes for c in g.consumers[u]) and u != g.output

    changed = True
    while changed:
        changed = False
        for i in list(diff_nodes):
            n = g[i]
            if passthrough(n) and not all(edge_diff(p, i) for p in n.inputs):
                diff_nodes.discard(i)
                changed = True

    edges = {(u, v): Domain.DIFF if edge_diff(u, v) else Domain.VALUE for (u, v) in g.edges}
    diff_calc, summation = {}, {}
    for i in g.order:
        n = g[i]
        if i not in diff_nodes:
            continue
        ports = g.activation_ports(i) if n.is_linear else list(n.inputs)
        diff_calc[i] = any(edges[(p, i)] == Domain.VALUE for p in ports)
        outs = g.consumers[i]
        summation[i] = (i == g.output or not outs
                        or any(edges[(i, c)] == Domain.VALUE for c in outs))
    owner = {}
    for i in g.order:
        if i in diff_nodes and not g[i].is_linear:
            owner[i] = _first_linear_ancestor(g, i, diff_nodes)
    return MaterializationPlan(edges, frozenset(diff_nodes), diff_calc, summation, owner)


def _first_linear_ancestor(g: LayerGraph, i: int, diff_nodes) -> int:
    n = g[i]
    while not n.is_linear:
        ps = [p for p in n.inputs if p in diff_nodes]
        n = g[min(ps, key=g.order.index)]
    return n.id


def no_bypass_plan(g: LayerGraph, diff_layers: Optional[Iterable[int]] = None) -> MaterializationPlan:
    """Every temporal layer materializes on its own (no graph analysis)."""
    D = set(g.linear_ids if diff_layers is None else diff_layers)
    edges = {e: Domain.VALUE for e in g.edges}
    return MaterializationPlan(edges, frozenset(D), {i: True for i in D}, {i: True for i in D}, {})


def check_plan_legal(g: LayerGraph, mp: MaterializationPlan) -> None:
    for (u, v), d in mp.edge_domain.items():
        if d != Domain.DIFF:
            continue
        if g[v].kind in (NodeKind.NONLINEAR, NodeKind.CONCAT, NodeKind.SPLIT) and v not in mp.computes_diff:
            raise GraphError(f"difference edge {u}->{v} feeds a value-domain node without summation")
        if u not in mp.computes_diff or v not in mp.computes_diff:
            raise GraphError(f"difference edge {u}->{v} outside a difference region")


# --------------------------------------------------------------------------
# Defo table and execution plans
# --------------------------------------------------------------------------

@dataclass
class DefoEntry:
    cycle_act: Optional[int] = None
    cycle_diff: Optional[int] = None
    use_diff: bool = False


class DefoTable:
    """Per-layer cycle records: 16-bit first/second-step cycles plus one decision bit."""

    entry_bits = DEFO_ENTRY_BITS

    def __init__(self, capacity: int = DEFO_ENTRIES):
        if capacity > DEFO_ENTRIES:
            raise DefoError(f"Defo table holds at most {DEFO_ENTRIES} layers, got {capacity}")
        self.capacity = capacity
        self.entries: dict[int, DefoEntry] = {}

    @classmethod
    def for_graph(cls, g: LayerGraph) -> "DefoTable":
        n = len(g.linear_ids)
        if n > DEFO_ENTRIES:
            raise DefoError(f"graph has {n} linear layers; Defo table holds {DEFO_ENTRIES}")
        return cls()

    def slot(self, layer: int) -> DefoEntry:
        if layer not in self.entries:
            if len(self.entries) >= self.capacity:
                raise DefoError(f"Defo table full ({self.capacity} entries)")
            self.entries[layer] = DefoEntry()
        return self.entries[layer]

    def __getitem__(self, layer) -> DefoEntry:
        return self.entries[layer]

    def __len__(self):
        return len(self.entries)


def saturate16(cycles: int) -> int:
    return min(int(cycles), CYCLE_FIELD_MAX)


def record_step_cycles(table: DefoTable, step: int, layer: int, cycles: int) -> DefoTable:
    if step not in (1, 2):
        raise DefoError(f"Defo records cycles only at steps 1 and 2, got {step}")
    if cycles < 0:
        raise DefoError("negative cycle count")
    e = table.slot(layer)
    if step == 1:
        e.cycle_act = saturate16(cycles)
    else:
        e.cycle_diff = saturate16(cycles)
    return table


def decide_flow(table: DefoTable) -> dict[int, bool]:
    out = {}
    for layer, e in table.entries.items():
        if e.cycle_act is None or e.cycle_diff is None:
            raise DefoError(f"layer {layer} has an unpopulated Defo entry")
        e.use_diff = e.cycle_diff < e.cycle_act
        out[layer] = e.use_diff
    return out


class Variant(enum.Enum):
    DITTO = "ditto"
    DITTO_PLUS = "ditto-plus"
    DYNAMIC_DITTO = "dynamic-ditto"
    IDEAL = "ideal"
    IDEAL_PLUS = "ideal-plus"
    DIRECT = "direct"
    TEMPORAL = "temporal"
    SPATIAL = "spatial"

    @property
    def uses_defo(self) -> bool:
        return self in (Variant.DITTO, Variant.DITTO_PLUS, Variant.DYNAMIC_DITTO)


def plan_for_step(step: int, variant: Variant, table: Optional[DefoTable], layers: Iterable[int],
                  switched: Iterable[int] = ()) -> dict[int, ExecMode]:
    variant = Variant(variant)
    layers = list(layers)
    if variant == Variant.DIRECT:
        return {l: ExecMode.DIRECT for l in layers}
    if variant == Variant.SPATIAL:
        return {l: ExecMode.SPATIAL for l in layers}
    if variant == Variant.TEMPORAL:
        return {l: ExecMode.DIRECT if step == 1 else ExecMode.TEMPORAL for l in layers}
    if not variant.uses_defo:
        raise DefoError(f"variant {variant.value} has no step rule; use ideal_plan")
    fallback = ExecMode.SPATIAL if variant == Variant.DITTO_PLUS else ExecMode.DIRECT
    if step == 1:
        return {l: fallback for l in layers}
    if step == 2:
        return {l: ExecMode.TEMPORAL for l in layers}
    if table is None:
        raise DefoError("steps >= 3 need a populated Defo table")
    switched = set(switched)
    out = {}
    for l in layers:
        e = table[l]
        if e.cycle_act is None or e.cycle_diff is None:
            raise DefoError(f"layer {l} has an unpopulated Defo entry")
        diff = e.use_diff and not (variant == Variant.DYNAMIC_DITTO and l in switched)
        out[l] = ExecMode.TEMPORAL if diff else fallback
    return out


ExecPlan = dict  # step -> {layer: ExecMode}


def ideal_plan(steps: int, layers: Iterable[int], cost: Callable[[int, int, ExecMode], int],
               plus: bool = False) -> ExecPlan:
    """Cheapest mode per layer per step by exhaustive evaluation of ``cost``."""
    fallback = ExecMode.SPATIAL if plus else ExecMode.DIRECT
    layers = list(layers)
    plan = {1: {l: fallback for l in layers}}
    for k in range(2, steps + 1):
        row = {}
        for l in layers:
            c_diff = cost(k, l, ExecMode.TEMPORAL)
            c_fb = cost(k, l, fallback)
            row[l] = ExecMode.TEMPORAL if c_diff < c_fb else fallback
        plan[k] = row
    return plan


def plan_agreement(plan: ExecPlan, oracle: ExecPlan, first_step: int = 3) -> tuple[int, int]:
    hit = tot = 0
    for k, row in oracle.items():
        if k < first_step:
            continue
        for l, m in row.items():
            tot += 1
            hit += plan[k][l] == m
    return hit, tot


def plan_to_dict(plan: ExecPlan) -> dict:
    return {str(k): {str(l): m.value for l, m in sorted(row.items())} for k, row in sorted(plan.items())}


def dumps_graph_and_plan(g: LayerGraph, mp: MaterializationPlan, plan: Optional[ExecPlan] = None) -> str:
    doc = {"graph": g.to_dict(), "materialization": mp.to_dict()}
    if plan is not None:
        doc["exec_plan"] = plan_to_dict(plan)
    return json.dumps(doc, indent=2, sort_keys=True)
