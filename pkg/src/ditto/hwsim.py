"""Cycle, traffic and energy model of the difference-processing accelerator
and its baselines.

Lane arithmetic: a 4-bit lane performs one 4-bit x 8-bit multiply per cycle;
an 8-bit activation takes two lanes (low nibble plus shifted high nibble).
ITC-style hardware has uniform 8-bit lanes and never skips zeros.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .diffengine import DiffCounts, ExecMode, count_classes, spatial_diff
from .flow import (
    DEFO_ENTRY_BITS,
    DefoTable,
    LayerGraph,
    MaterializationPlan,
    NodeKind,
    NonLinearKind,
    Variant,
    analyze_graph,
    decide_flow,
    no_bypass_plan,
    ideal_plan,
    plan_agreement,
    plan_for_step,
    record_step_cycles,
)
from .qtensor import lower_operands
from .replay import QuantizedTrace

ACC_BYTES = 4
ENCODER_STAGES = 2


class IncompatiblePlan(ValueError):
    pass


class PlanMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EnergyConstants:
    e_mult4: float = 1.0
    e_mult8: float = 2.2
    e_add: float = 0.3
    e_shift: float = 0.05
    e_sram_byte: float = 1.5
    e_dram_byte: float = 100.0


@dataclass(frozen=True)
class HwConfig:
    name: str
    n_lanes: int
    lane_bits: int = 4
    lanes_per_tree: int = 4
    shifters_per_tree: int = 2
    outlier_lanes: int = 0
    dram_bw: int = 64
    sram_bytes: int = 192 * 2**20
    weights_resident: bool = True
    pipeline_fill: int = 2
    freq_ghz: float = 1.0
    energy: EnergyConstants = EnergyConstants()
    modes: frozenset = frozenset({ExecMode.DIRECT})
    has_encoder: bool = False
    # nonlinear kinds whose boundaries cost no previous-tensor traffic
    transparent: tuple = ()

    def __post_init__(self):
        if self.lane_bits not in (4, 8):
            raise ValueError("lane_bits must be 4 or 8")
        for f in ("n_lanes", "lanes_per_tree", "shifters_per_tree", "dram_bw", "sram_bytes", "freq_ghz"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.outlier_lanes < 0 or self.pipeline_fill < 0:
            raise ValueError("outlier_lanes and pipeline_fill must be non-negative")
        e = self.energy
        if min(asdict(e).values()) <= 0:
            raise ValueError("energy constants must be positive")
        if e.e_mult8 < 2 * e.e_mult4:
            raise ValueError("e_mult8 must be at least 2 * e_mult4")

    @property
    def zero_skipping(self) -> bool:
        return self.has_encoder

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = sorted(m.value for m in self.modes)
        d["transparent"] = [t.value for t in self.transparent]
        return d


class Preset(enum.Enum):
    ITC = "itc"
    DIFFY = "diffy"
    CAMBRICON_D = "cambricon-d"
    DITTO = "ditto"
    DITTO_PLUS = "ditto-plus"


# multiplier-lane counts of the iso-area configurations
PRESET_LANES = {
    Preset.ITC: (27648, 8, 0),
    Preset.DIFFY: (39398, 4, 0),
    Preset.CAMBRICON_D: (38280, 4, 2552),
    Preset.DITTO: (39398, 4, 0),
    Preset.DITTO_PLUS: (39398, 4, 0),
}

PRESET_MODES = {
    Preset.ITC: frozenset({ExecMode.DIRECT}),
    Preset.DIFFY: frozenset({ExecMode.DIRECT, ExecMode.SPATIAL}),
    Preset.CAMBRICON_D: frozenset({ExecMode.DIRECT, ExecMode.TEMPORAL}),
    Preset.DITTO: frozenset({ExecMode.DIRECT, ExecMode.TEMPORAL}),
    Preset.DITTO_PLUS: frozenset({ExecMode.DIRECT, ExecMode.TEMPORAL, ExecMode.SPATIAL}),
}

MATCHING_VARIANT = {
    Preset.ITC: Variant.DIRECT,
    Preset.DIFFY: Variant.SPATIAL,
    Preset.CAMBRICON_D: Variant.TEMPORAL,
    Preset.DITTO: Variant.DITTO,
    Preset.DITTO_PLUS: Variant.DITTO_PLUS,
}

VARIANT_MODES = {
    Variant.DIRECT: {ExecMode.DIRECT},
    Variant.SPATIAL: {ExecMode.SPATIAL},
    Variant.TEMPORAL: {ExecMode.DIRECT, ExecMode.TEMPORAL},
    Variant.DITTO: {ExecMode.DIRECT, ExecMode.TEMPORAL},
    Variant.DYNAMIC_DITTO: {ExecMode.DIRECT, ExecMode.TEMPORAL},
    Variant.IDEAL: {ExecMode.DIRECT, ExecMode.TEMPORAL},
    Variant.DITTO_PLUS: {ExecMode.SPATIAL, ExecMode.TEMPORAL},
    Variant.IDEAL_PLUS: {ExecMode.SPATIAL, ExecMode.TEMPORAL},
}

# Toy layers are ~1e4 MACs; full-size lane counts would make every layer
# memory bound, so toy experiments scale lanes down uniformly.
TOY_LANE_SCALE = 1 / 128


def preset_config(preset, lane_scale: float = 1.0, **overrides) -> HwConfig:
    preset = Preset(preset)
    lanes, bits, outliers = PRESET_LANES[preset]
    if lane_scale != 1.0:
        lanes = max(1, round(lanes * lane_scale))
        outliers = max(1, round(outliers * lane_scale)) if outliers else 0
    base = dict(
        name=preset.value,
        n_lanes=lanes,
        lane_bits=bits,
        outlier_lanes=outliers,
        modes=PRESET_MODES[preset],
        has_encoder=preset != Preset.ITC,
        transparent=(NonLinearKind.GROUPNORM, NonLinearKind.SILU) if preset == Preset.CAMBRICON_D else (),
    )
    base.update(overrides)
    if isinstance(base.get("energy"), dict):
        base["energy"] = EnergyConstants(**base["energy"])
    return HwConfig(**base)


def check_compatible(variant: Variant, cfg: HwConfig):
    need = VARIANT_MODES[Variant(variant)]
    missing = need - set(cfg.modes)
    if missing:
        raise IncompatiblePlan(
            f"{cfg.name} hardware cannot run {Variant(variant).value} plans "
            f"(needs {sorted(m.value for m in missing)})")


# --------------------------------------------------------------------------
# Per-layer workload statistics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Stream:
    """Class counts of one operand stream and the MACs each element feeds."""

    counts: DiffCounts
    macs: int


@dataclass(frozen=True)
class LayerWork:
    layer: int
    step: int
    dense_elems: int
    macs: int
    temporal: Optional[tuple] = None  # tuple[Stream, ...]; None on step 1
    spatial: Optional[Stream] = None
    spatial_base: int = 0
    port_bytes: tuple = ()  # ((producer, bytes), ...) for step-varying operands
    weight_bytes: int = 0
    out_elems: int = 0
    raw_elems: int = 0  # differenced elements before lowering (encoder input)

    @property
    def in_bytes(self) -> int:
        return sum(b for _, b in self.port_bytes)


def _lowered_delta_counts(delta: np.ndarray, w_shape, desc) -> DiffCounts:
    A, _ = lower_operands(delta, np.zeros(w_shape, dtype=np.int8), desc)
    return count_classes(A)


def layer_work(qt: QuantizedTrace, step: int, layer: int) -> LayerWork:
    g = qt.graph
    n = g[layer]
    desc = n.desc()
    a, w = qt.operands(step, layer)
    w_shape = qt.weight_shape(layer)
    A, W = lower_operands(a.values, np.zeros(w_shape, dtype=np.int8), desc)
    rows, macs = A.shape[1], W.shape[2]
    const_w = n.weight is not None or n.inputs[1] in g.constant
    temporal = None
    if step >= 2:
        a_prev, w_prev = qt.operands(step - 1, layer)
        da = a.values.astype(np.int64) - a_prev.values.astype(np.int64)
        streams = [Stream(_lowered_delta_counts(da, w_shape, desc), macs)]
        if not const_w:
            db = w.values.astype(np.int64) - w_prev.values.astype(np.int64)
            streams.append(Stream(count_classes(db), rows))
        temporal = tuple(streams)
    sd = spatial_diff(a, desc, w_shape)
    ports = tuple((p, int(np.prod(g[p].dims))) for p in g.activation_ports(layer))
    weight_bytes = int(np.prod(w_shape)) if const_w else 0
    raw = a.size + (0 if const_w else w.size)
    return LayerWork(layer, step, int(A.size), int(macs), temporal, Stream(sd.diff.counts, int(macs)),
                     sd.base_elements, ports, weight_bytes, int(np.prod(n.dims)), int(raw))


class Workload:
    """Operand statistics of every step-varying linear layer at every step."""

    def __init__(self, graph: LayerGraph, steps: int, works: dict):
        self.graph = graph
        self.steps = steps
        self.works = works
        self.layers = list(graph.linear_ids)
        self.total_weight_bytes = sum(int(graph[i].weight.size) for i in graph.order
                                      if graph[i].is_linear and graph[i].weight is not None)
        self.vpu_elems = vpu_ownership(graph)

    @classmethod
    def from_trace(cls, qt: QuantizedTrace) -> "Workload":
        works = {(k, l): layer_work(qt, k, l)
                 for k in range(1, qt.steps + 1) for l in qt.graph.linear_ids}
        return cls(qt.graph, qt.steps, works)

    def __getitem__(self, key) -> LayerWork:
        return self.works[key]


def vpu_ownership(g: LayerGraph) -> dict[int, list[int]]:
    """Element counts of the value-domain vector ops (nonlinear, add) owned by each layer.

    A vector op belongs to the nearest linear producer upstream; ops with no
    linear ancestor go to their first linear consumer.
    """
    owned: dict[int, list[int]] = {l: [] for l in g.linear_ids}
    pos = {i: k for k, i in enumerate(g.order)}
    for i in g.order:
        n = g[i]
        if n.kind not in (NodeKind.NONLINEAR, NodeKind.ADD) or i in g.constant:
            continue
        owner = _nearest(g, i, pos, owned, backwards=True)
        if owner is None:
            owner = _nearest(g, i, pos, owned, backwards=False)
        if owner is not None:
            owned[owner].append(int(np.prod(n.dims)))
    return owned


def _nearest(g, i, pos, owned, backwards):
    seen, frontier, found = set(), [i], []
    while frontier:
        nxt = []
        for j in frontier:
            for p in (g[j].inputs if backwards else g.consumers[j]):
                if p in seen:
                    continue
                seen.add(p)
                if p in owned:
                    found.append(p)
                elif not g[p].is_linear:
                    nxt.append(p)
        frontier = nxt
    if not found:
        return None
    return max(found, key=pos.get) if backwards else min(found, key=pos.get)


# --------------------------------------------------------------------------
# Cost primitives
# --------------------------------------------------------------------------

def slots_for(counts, mode: ExecMode, lane_bits: int = 4) -> int:
    """Multiplier slots per MAC of the reduction for a classified operand."""
    n_zero, n_low, n_full = counts
    if mode == ExecMode.DIRECT:
        n = n_zero + n_low + n_full
        return n if lane_bits == 8 else 2 * n
    if lane_bits == 8:
        return n_low + n_full
    return n_low + 2 * n_full


def compute_cycles(total_slots: int, cfg: HwConfig) -> int:
    if cfg.n_lanes <= 0:
        raise ValueError("zero lanes")
    return -(-int(total_slots) // cfg.n_lanes)


def split_compute_cycles(low_slots: int, full_macs: int, cfg: HwConfig) -> int:
    """Normal lanes take low-width work, outlier lanes take full-width MACs."""
    if cfg.outlier_lanes <= 0:
        raise ValueError("split queues need outlier lanes")
    return max(-(-int(low_slots) // cfg.n_lanes), -(-int(full_macs) // cfg.outlier_lanes))


def stall_cycles(traffic_bytes: int, compute: int, cfg: HwConfig) -> int:
    return max(0, -(-int(traffic_bytes) // cfg.dram_bw) - int(compute))


def encoder_cycles(n_elements: int, cfg: HwConfig) -> int:
    return -(-int(n_elements) // cfg.n_lanes) + ENCODER_STAGES


def vpu_cycles(layer: int, mp: Optional[MaterializationPlan], out_elems: int,
               owned_elems: Iterable[int], cfg: HwConfig, add_sums: Iterable[int] = ()) -> int:
    ops = list(owned_elems)
    if mp is not None and mp.needs_summation.get(layer, False):
        ops.append(out_elems)
    ops.extend(add_sums)
    return sum(-(-e // cfg.n_lanes) for e in ops)


@dataclass(frozen=True)
class Traffic:
    weights: int = 0
    cur_in: int = 0
    prev_in: int = 0
    prev_out: int = 0
    out: int = 0

    @property
    def total(self) -> int:
        return self.weights + self.cur_in + self.prev_in + self.prev_out + self.out


def _add_summations(layer: int, mp: Optional[MaterializationPlan], g: Optional[LayerGraph]) -> list[int]:
    if mp is None or g is None:
        return []
    return [int(np.prod(g[a].dims)) for a, o in mp.summation_owner.items()
            if o == layer and mp.needs_summation.get(a, False)]


def memory_traffic(work: LayerWork, mode: ExecMode, mp: Optional[MaterializationPlan], cfg: HwConfig,
                   weights_fit: bool = True, graph: Optional[LayerGraph] = None) -> Traffic:
    weights = 0 if (cfg.weights_resident and weights_fit) else work.weight_bytes
    t = Traffic(weights=weights, cur_in=work.in_bytes, out=work.out_elems)
    if mode != ExecMode.TEMPORAL or mp is None:
        return t
    l = work.layer
    prev_in = 0
    if mp.needs_diff_calc.get(l, False):
        from .flow import Domain
        prev_in = sum(b for p, b in work.port_bytes if mp.edge_domain.get((p, l)) == Domain.VALUE)
    prev_out = ACC_BYTES * work.out_elems if mp.needs_summation.get(l, False) else 0
    prev_out += ACC_BYTES * sum(_add_summations(l, mp, graph))
    return replace(t, prev_in=prev_in, prev_out=prev_out)


@dataclass(frozen=True)
class MacSplit:
    low: int       # single-lane (4-bit) MACs
    full: int      # 8-bit MACs
    encoded: int   # elements passed through the encoder


def mac_split(work: LayerWork, mode: ExecMode) -> MacSplit:
    if mode == ExecMode.DIRECT:
        return MacSplit(0, work.dense_elems * work.macs, 0)
    if mode == ExecMode.SPATIAL:
        s = work.spatial
        return MacSplit(s.counts.n_low * s.macs, (s.counts.n_full + work.spatial_base) * s.macs,
                        s.counts.total + work.spatial_base)
    if work.temporal is None:
        raise PlanMismatch(f"layer {work.layer} has no previous step for temporal differences")
    low = sum(s.counts.n_low * s.macs for s in work.temporal)
    full = sum(s.counts.n_full * s.macs for s in work.temporal)
    # the encoder differences operands before im2col replication
    enc = work.raw_elems or sum(s.counts.total for s in work.temporal)
    return MacSplit(low, full, enc)


def bops_of(split: MacSplit, w_bits: int = 8) -> int:
    return (split.low * 4 + split.full * 8) * w_bits


def _compute_and_energy(split: MacSplit, mode: ExecMode, cfg: HwConfig):
    e = cfg.energy
    if cfg.lane_bits == 8:
        slots = split.low + split.full
        return compute_cycles(slots, cfg), slots, slots * (e.e_mult8 + e.e_add)
    pair = 2 * e.e_mult4 + e.e_shift
    if cfg.outlier_lanes:
        if mode == ExecMode.DIRECT:
            rate = cfg.n_lanes // 2 + cfg.outlier_lanes
            cyc = -(-split.full // rate)
            on_pairs = split.full * (cfg.n_lanes // 2) / rate
            on_out = split.full - on_pairs
            slots = 2 * on_pairs + on_out
            return cyc, slots, on_pairs * pair + on_out * e.e_mult8 + slots * e.e_add
        slots = split.low + split.full
        cyc = split_compute_cycles(split.low, split.full, cfg)
        return cyc, slots, split.low * e.e_mult4 + split.full * e.e_mult8 + slots * e.e_add
    slots = split.low + 2 * split.full
    return compute_cycles(slots, cfg), slots, split.low * e.e_mult4 + split.full * pair + slots * e.e_add


@dataclass(frozen=True)
class LayerCost:
    step: int
    layer: int
    mode: ExecMode
    compute_cycles: int
    stall_cycles: int
    enc_cycles: int
    vpu_cycles: int
    defo_cycles: int
    fill_cycles: int
    traffic: Traffic
    energy: float
    bops: int
    slots: float

    @property
    def busy_cycles(self) -> int:
        return max(self.compute_cycles, self.enc_cycles, self.vpu_cycles)

    @property
    def cycles(self) -> int:
        """Layer cycles without the Defo bookkeeping cycle."""
        return self.fill_cycles + self.busy_cycles + self.stall_cycles

    @property
    def total_cycles(self) -> int:
        return self.cycles + self.defo_cycles


def layer_cost(work: LayerWork, mode: ExecMode, cfg: HwConfig, mp: Optional[MaterializationPlan] = None,
               graph: Optional[LayerGraph] = None, owned_elems: Iterable[int] = (),
               weights_fit: bool = True, defo: bool = False) -> LayerCost:
    if mode not in cfg.modes:
        raise IncompatiblePlan(f"{cfg.name} hardware cannot execute {mode.value} layers")
    split = mac_split(work, mode)
    comp, slots, e_mac = _compute_and_energy(split, mode, cfg)
    enc = encoder_cycles(split.encoded, cfg) if (mode != ExecMode.DIRECT and cfg.has_encoder) else 0
    vpu = vpu_cycles(work.layer, mp if mode == ExecMode.TEMPORAL else None, work.out_elems, owned_elems, cfg,
                     _add_summations(work.layer, mp, graph) if mode == ExecMode.TEMPORAL else ())
    traffic = memory_traffic(work, mode, mp, cfg, weights_fit, graph)
    busy = max(comp, enc, vpu)
    stall = stall_cycles(traffic.total, busy, cfg)
    sram = work.weight_bytes + work.in_bytes
    energy = e_mac + cfg.energy.e_sram_byte * sram + cfg.energy.e_dram_byte * traffic.total
    return LayerCost(work.step, work.layer, mode, comp, stall, enc, vpu, 1 if defo else 0,
                     cfg.pipeline_fill, traffic, energy, bops_of(split), slots)


# --------------------------------------------------------------------------
# Whole-run simulation
# --------------------------------------------------------------------------

@dataclass
class RunReport:
    preset: str
    variant: str
    rows: list = field(default_factory=list)
    defo_updates: int = 0
    defo_energy: float = 0.0
    plan: dict = field(default_factory=dict)
    decisions: dict = field(default_factory=dict)

    @property
    def total_cycles(self) -> int:
        return sum(r.total_cycles for r in self.rows)

    @property
    def compute_cycles(self) -> int:
        return sum(r.compute_cycles for r in self.rows)

    @property
    def stall_cycles(self) -> int:
        return sum(r.stall_cycles for r in self.rows)

    @property
    def total_traffic(self) -> int:
        return sum(r.traffic.total for r in self.rows)

    @property
    def total_energy(self) -> float:
        return sum(r.energy for r in self.rows) + self.defo_energy

    @property
    def total_bops(self) -> int:
        return sum(r.bops for r in self.rows)

    def layer_cycles(self, layer: int) -> int:
        return sum(r.total_cycles for r in self.rows if r.layer == layer)

    def layer_traffic(self, layer: int) -> int:
        return sum(r.traffic.total for r in self.rows if r.layer == layer)

    def summary(self) -> dict:
        return {
            "preset": self.preset,
            "variant": self.variant,
            "rows": len(self.rows),
            "total_cycles": self.total_cycles,
            "compute_cycles": self.compute_cycles,
            "stall_cycles": self.stall_cycles,
            "total_traffic_bytes": self.total_traffic,
            "total_energy": self.total_energy,
            "total_bops": self.total_bops,
            "defo_updates": self.defo_updates,
            "defo_decisions": {str(k): v for k, v in sorted(self.decisions.items())},
        }

    CSV_COLUMNS = ("step", "layer", "mode", "compute_cycles", "stall_cycles", "enc_cycles", "vpu_cycles",
                   "defo_cycles", "total_cycles", "traffic_weights", "traffic_cur_in", "traffic_prev_in",
                   "traffic_prev_out", "traffic_out", "energy", "bops")

    def to_csv(self, extra: Optional[dict] = None) -> str:
        extra = extra or {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.CSV_COLUMNS) + list(extra))
        for r in self.rows:
            t = r.traffic
            w.writerow([r.step, r.layer, r.mode.value, r.compute_cycles, r.stall_cycles, r.enc_cycles,
                        r.vpu_cycles, r.defo_cycles, r.total_cycles, t.weights, t.cur_in, t.prev_in,
                        t.prev_out, t.out, repr(float(r.energy)), r.bops] + list(extra.values()))
        return buf.getvalue()


class Simulator:
    """Evaluates execution plans over a workload for one hardware configuration."""

    def __init__(self, workload: Workload, cfg: HwConfig, bypass: bool = True):
        self.w = workload
        self.cfg = cfg
        self.bypass = bypass
        self.g = workload.graph
        self.weights_fit = workload.total_weight_bytes <= cfg.sram_bytes
        self._mp_cache: dict = {}

    def materialization(self, diff_layers) -> MaterializationPlan:
        key = frozenset(diff_layers)
        if key not in self._mp_cache:
            self._mp_cache[key] = (analyze_graph(self.g, key, self.cfg.transparent) if self.bypass
                                   else no_bypass_plan(self.g, key))
        return self._mp_cache[key]

    def cost(self, step: int, layer: int, mode: ExecMode, mp: Optional[MaterializationPlan],
             defo: bool = False) -> LayerCost:
        return layer_cost(self.w[(step, layer)], mode, self.cfg, mp, self.g, self.w.vpu_elems.get(layer, ()),
                          self.weights_fit, defo)

    def step_costs(self, step: int, modes: dict, defo: bool = False) -> dict[int, LayerCost]:
        mp = self.materialization(l for l, m in modes.items() if m == ExecMode.TEMPORAL)
        return {l: self.cost(step, l, modes[l], mp, defo) for l in self.w.layers}

    def isolated_cost(self, step: int, layer: int, mode: ExecMode) -> int:
        """Cycles of one layer as Defo would measure them (all layers on differences)."""
        mp = self.materialization(self.w.layers) if mode == ExecMode.TEMPORAL else None
        return self.cost(step, layer, mode, mp).cycles

    def run_plan(self, plan: dict, variant: str = "custom", defo: bool = False) -> RunReport:
        rep = RunReport(self.cfg.name, variant, plan=plan)
        for k in range(1, self.w.steps + 1):
            modes = plan.get(k)
            if modes is None or set(modes) != set(self.w.layers):
                raise PlanMismatch(f"plan does not cover every layer at step {k}")
            for l, m in modes.items():
                if m not in self.cfg.modes:
                    raise IncompatiblePlan(f"{self.cfg.name} hardware cannot execute {m.value} layers")
                if m == ExecMode.TEMPORAL and k == 1:
                    raise PlanMismatch("temporal differences are impossible at step 1")
            costs = self.step_costs(k, modes, defo)
            rep.rows.extend(costs[l] for l in self.w.layers)
        return rep

    def run_defo(self, variant: Variant) -> tuple[RunReport, DefoTable]:
        variant = Variant(variant)
        table = DefoTable.for_graph(self.g)
        rep = RunReport(self.cfg.name, variant.value)
        switched: set = set()
        entry_energy = self.cfg.energy.e_sram_byte * DEFO_ENTRY_BITS / 8
        for k in range(1, self.w.steps + 1):
            modes = plan_for_step(k, variant, table if k >= 3 else None, self.w.layers, switched)
            rep.plan[k] = modes
            costs = self.step_costs(k, modes, defo=True)
            if k in (1, 2):
                for l in self.w.layers:
                    record_step_cycles(table, k, l, costs[l].cycles)
                    rep.defo_updates += 1
                if k == 2:
                    rep.decisions = decide_flow(table)
                    rep.defo_updates += len(self.w.layers)
            elif variant == Variant.DYNAMIC_DITTO:
                for l, m in modes.items():
                    if m == ExecMode.TEMPORAL and costs[l].cycles > table[l].cycle_act:
                        switched.add(l)
            rep.rows.extend(costs[l] for l in self.w.layers)
        rep.defo_energy = rep.defo_updates * entry_energy
        return rep, table

    def ideal(self, plus: bool = False) -> dict:
        return ideal_plan(self.w.steps, self.w.layers, self.isolated_cost, plus=plus)

    def run(self, variant) -> RunReport:
        variant = Variant(variant)
        check_compatible(variant, self.cfg)
        if self.w.steps == 0:
            return RunReport(self.cfg.name, variant.value)
        if variant.uses_defo:
            return self.run_defo(variant)[0]
        if variant in (Variant.IDEAL, Variant.IDEAL_PLUS):
            # same hardware as Ditto with a perfect predictor, Defo Unit included
            return self.run_plan(self.ideal(plus=variant == Variant.IDEAL_PLUS), variant.value, defo=True)
        plan = {k: plan_for_step(k, variant, None, self.w.layers) for k in range(1, self.w.steps + 1)}
        return self.run_plan(plan, variant.value)


def run_sim(workload: Workload, plan_or_variant, cfg: HwConfig) -> RunReport:
    sim = Simulator(workload, cfg)
    if isinstance(plan_or_variant, dict):
        return sim.run_plan(plan_or_variant)
    return sim.run(plan_or_variant)


def defo_accuracy(workload: Workload, cfg: HwConfig, plus: bool = False) -> tuple[int, int]:
    sim = Simulator(workload, cfg)
    rep, _ = sim.run_defo(Variant.DITTO_PLUS if plus else Variant.DITTO)
    return plan_agreement(rep.plan, sim.ideal(plus=plus))


# --------------------------------------------------------------------------
# Preset comparison
# --------------------------------------------------------------------------

@dataclass
class CompareMatrix:
    rows: dict  # preset -> {column: value}
    defo_accuracy: tuple
    reference: dict = field(default_factory=dict)

    COLUMNS = ("cycles", "cycles_norm", "speedup", "energy_norm", "traffic_norm", "bops_norm")

    def to_csv(self, extra: Optional[dict] = None) -> str:
        extra = extra or {}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["preset", "variant"] + list(self.COLUMNS) + list(extra))
        for p, r in self.rows.items():
            w.writerow([p, r["variant"]] + [r[c] for c in self.COLUMNS] + list(extra.values()))
        return buf.getvalue()

    def to_dict(self) -> dict:
        hit, tot = self.defo_accuracy
        return {"rows": self.rows, "defo_accuracy": {"matched": hit, "total": tot,
                                                     "fraction": hit / tot if tot else None},
                "reference": self.reference}


def compare_presets(workload: Workload, lane_scale: float = TOY_LANE_SCALE, **overrides) -> CompareMatrix:
    reports = {}
    for p in Preset:
        cfg = preset_config(p, lane_scale, **overrides)
        reports[p] = Simulator(workload, cfg).run(MATCHING_VARIANT[p])
    base = reports[Preset.ITC]
    rows = {}
    for p, r in reports.items():
        rows[p.value] = {
            "variant": r.variant,
            "cycles": r.total_cycles,
            "cycles_norm": r.total_cycles / base.total_cycles,
            "speedup": base.total_cycles / r.total_cycles,
            "energy_norm": r.total_energy / base.total_energy,
            "traffic_norm": r.total_traffic / base.total_traffic,
            "bops_norm": r.total_bops / base.total_bops,
        }
    ditto_cfg = preset_config(Preset.DITTO, lane_scale, **overrides)
    sim = Simulator(workload, ditto_cfg)
    # temporal differences everywhere, without Defo or graph analysis
    all_temporal = Simulator(workload, ditto_cfg, bypass=False).run(Variant.TEMPORAL)
    ideal = sim.run(Variant.IDEAL)
    acc = defo_accuracy(workload, ditto_cfg)
    reference = {
        "ditto_all_temporal_traffic_norm": all_temporal.total_traffic / base.total_traffic,
        "ditto_all_temporal_cycles_norm": all_temporal.total_cycles / base.total_cycles,
        "ideal_ditto_cycles_norm": ideal.total_cycles / base.total_cycles,
        "ditto_vs_ideal_performance": ideal.total_cycles / reports[Preset.DITTO].total_cycles,
        "lane_scale": lane_scale,
    }
    return CompareMatrix(rows, acc, reference)


def report_json(rep: RunReport, extra: Optional[dict] = None) -> str:
    doc = rep.summary()
    doc.update(extra or {})
    return json.dumps(doc, indent=2, sort_keys=True, default=str)
