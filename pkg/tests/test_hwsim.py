import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ditto.diffengine import DiffCounts, ExecMode, count_classes
from ditto.flow import LayerGraph, LayerNode, NodeKind, NonLinearKind, Variant, analyze_graph, no_bypass_plan
from ditto.hwsim import (
    ENCODER_STAGES, PRESET_LANES, TOY_LANE_SCALE, HwConfig, IncompatiblePlan, LayerWork, PlanMismatch, Preset,
    Simulator, Stream, Workload, bops_of, compute_cycles, encoder_cycles, layer_cost, mac_split, memory_traffic,
    preset_config, slots_for, split_compute_cycles, stall_cycles, vpu_cycles, vpu_ownership,
)

MIXED = DiffCounts(15, 9, 3)


def work(counts=MIXED, macs=1, step=2, in_bytes=27, out=10, weight_bytes=0, streams=None, raw=None):
    c = DiffCounts(*counts)
    return LayerWork(layer=1, step=step, dense_elems=c.total, macs=macs,
                     temporal=streams or (Stream(c, macs),), spatial=Stream(c, macs), spatial_base=0,
                     port_bytes=((0, in_bytes),), weight_bytes=weight_bytes, out_elems=out,
                     raw_elems=raw if raw is not None else c.total)


def test_slots_examples():
    assert slots_for(MIXED, ExecMode.TEMPORAL) == 15
    assert slots_for(MIXED, ExecMode.DIRECT, lane_bits=8) == 27
    assert slots_for(MIXED, ExecMode.DIRECT, lane_bits=4) == 54
    assert slots_for(DiffCounts(9, 0, 0), ExecMode.SPATIAL) == 0


@given(st.lists(st.integers(-254, 254), max_size=80))
def test_slots_match_elementwise_sum(v):
    per = sum(0 if x == 0 else (1 if abs(x) <= 15 else 2) for x in v)
    assert slots_for(count_classes(np.array(v, dtype=np.int64)), ExecMode.TEMPORAL) == per


def test_compute_cycle_examples():
    cfg = preset_config(Preset.DITTO, n_lanes=16)
    assert compute_cycles(15, cfg) == 1
    assert compute_cycles(0, cfg) == 0
    assert compute_cycles(17, cfg) == 2
    with pytest.raises(ValueError):
        compute_cycles(1, SimpleNamespace(n_lanes=0))
    with pytest.raises(ValueError):
        preset_config(Preset.DITTO, n_lanes=0)


def test_outlier_queues_match_hand_schedule():
    cfg = preset_config(Preset.CAMBRICON_D, n_lanes=4, outlier_lanes=1)
    # three layers: (low, full) element counts with 2 MACs per element
    layers = [(7, 3), (0, 0), (12, 1)]
    for low, full in layers:
        # hand queue: normal lanes drain low MACs four at a time, the outlier lane one full MAC per cycle
        t_norm, t_out, q_low, q_full = 0, 0, 2 * low, 2 * full
        while q_low > 0:
            q_low -= 4
            t_norm += 1
        while q_full > 0:
            q_full -= 1
            t_out += 1
        w = work((0, low, full), macs=2)
        assert layer_cost(w, ExecMode.TEMPORAL, cfg).compute_cycles == max(t_norm, t_out)
    assert split_compute_cycles(8, 3, cfg) == 3
    # direct execution spreads 8-bit MACs over lane pairs and outlier lanes
    assert layer_cost(work((6, 0, 0), macs=1), ExecMode.DIRECT, cfg).compute_cycles == 2


def test_stall_examples():
    cfg = preset_config(Preset.DITTO, dram_bw=64)
    assert stall_cycles(640, 20, cfg) == 0
    assert stall_cycles(641, 0, cfg) == 11
    assert stall_cycles(0, 0, cfg) == 0


def test_encoder_examples():
    cfg = preset_config(Preset.DITTO, n_lanes=32)
    assert encoder_cycles(32, cfg) == 3
    assert encoder_cycles(0, cfg) == 2
    assert layer_cost(work(), ExecMode.DIRECT, cfg).enc_cycles == 0
    itc = preset_config(Preset.ITC)
    assert not itc.has_encoder


def test_vpu_examples():
    cfg = preset_config(Preset.DITTO, n_lanes=64)
    assert vpu_cycles(1, None, 10, [], cfg) == 0
    assert vpu_cycles(1, None, 10, [64], cfg) == 1
    assert vpu_cycles(1, None, 10, [65, 64], cfg) == 3


def test_vpu_ownership_of_transformer_block(dit):
    g = dit[0].graph
    own = vpu_ownership(g)
    by_name = {g[i].name: i for i in g.order}
    fc1, qk, proj = by_name["b0.fc1"], by_name["b0.qk"], by_name["b0.proj"]
    # GeLU after fc1, softmax after Q.K, residual add and the following LayerNorm after proj
    assert own[fc1] == [16 * 64]
    assert own[qk] == [2 * 16 * 16]
    assert own[proj] == [16 * 32, 16 * 32]
    vector_nodes = [i for i in g.order if g[i].kind in (NodeKind.NONLINEAR, NodeKind.ADD) and i not in g.constant]
    assert sum(len(v) for v in own.values()) == len(vector_nodes)
    cfg = preset_config(Preset.DITTO, n_lanes=100)
    block = [by_name[f"b0.{n}"] for n in ("q", "k", "v", "qk", "pv", "proj", "xq", "xqk", "xpv", "xproj", "fc1", "fc2")]
    # hand count: softmax 512, res1+ln2 512+512, xsoftmax 2*16*8, res2+ln3 512+512, gelu 1024, res3+ln(next) 512+512
    hand = [512, 512, 512, 256, 512, 512, 1024, 512, 512]
    total = sum(vpu_cycles(l, None, 0, own[l], cfg) for l in block)
    assert total == sum(math.ceil(e / 100) for e in hand)


def test_traffic_rules():
    cfg = preset_config(Preset.DITTO)
    g = LayerGraph([LayerNode(0, NodeKind.INPUT, (), (2, 4)),
                    LayerNode(1, NodeKind.FC, (0,), (2, 4), weight=np.ones((4, 4), np.float32)),
                    LayerNode(2, NodeKind.NONLINEAR, (1,), (2, 4), sub=NonLinearKind.GELU)])
    w = work(in_bytes=8, out=8, weight_bytes=16)
    mp = analyze_graph(g)
    d = memory_traffic(w, ExecMode.DIRECT, None, cfg)
    assert (d.weights, d.cur_in, d.out, d.total) == (0, 8, 8, 16)
    t = memory_traffic(w, ExecMode.TEMPORAL, mp, cfg)
    assert t.total == d.total + 8 + 4 * 8
    assert memory_traffic(w, ExecMode.SPATIAL, mp, cfg) == d
    # weights stream from DRAM when they do not fit on chip
    assert memory_traffic(w, ExecMode.DIRECT, None, cfg, weights_fit=False).weights == 16
    small = preset_config(Preset.DITTO, weights_resident=False)
    assert memory_traffic(w, ExecMode.DIRECT, None, small).weights == 16


def test_zero_difference_fc_limiting_case():
    cfg = preset_config(Preset.DITTO)
    ones = np.ones((4, 4), np.float32)
    g = LayerGraph([LayerNode(0, NodeKind.INPUT, (), (2, 4)),
                    LayerNode(1, NodeKind.FC, (0,), (2, 4), weight=ones),
                    LayerNode(2, NodeKind.FC, (1,), (2, 4), weight=ones),
                    LayerNode(3, NodeKind.FC, (2,), (2, 4), weight=ones),
                    LayerNode(4, NodeKind.NONLINEAR, (3,), (2, 4), sub=NonLinearKind.GELU)])
    mp = analyze_graph(g)
    assert not mp.needs_summation[2] and not mp.needs_diff_calc[2]
    w = LayerWork(2, 2, 8, 4, (Stream(DiffCounts(8, 0, 0), 4),), Stream(DiffCounts(8, 0, 0), 4), 0,
                  ((1, 8),), 16, 8, 8)
    c = layer_cost(w, ExecMode.TEMPORAL, cfg, mp, g)
    assert c.compute_cycles == 0
    assert c.traffic.prev_out == 0 and c.traffic.weights == 0
    assert c.traffic.total == c.traffic.cur_in + c.traffic.out


def test_iso_work_throughput_and_preset_threshold():
    macs = 10**6
    ditto, itc = preset_config(Preset.DITTO), preset_config(Preset.ITC)
    full = work((0, 0, 1), macs=macs)
    assert layer_cost(full, ExecMode.TEMPORAL, ditto).compute_cycles == math.ceil(macs / (39398 // 2))
    assert layer_cost(full, ExecMode.DIRECT, itc).compute_cycles == math.ceil(macs / 27648)
    # slots per element below 39398/27648 makes Ditto faster than ITC
    for counts in [(0, 7, 3), (5, 5, 0), (1, 2, 7), (0, 0, 10), (4, 3, 3)]:
        c = DiffCounts(*counts)
        w = work(counts, macs=27648 * 39398)
        faster = (layer_cost(w, ExecMode.TEMPORAL, ditto).compute_cycles
                  < layer_cost(w, ExecMode.DIRECT, itc).compute_cycles)
        assert faster == ((c.n_low + 2 * c.n_full) * 27648 < c.total * 39398)


def test_incompatible_plans_rejected(unet):
    _, _, w = unet
    with pytest.raises(IncompatiblePlan):
        Simulator(w, preset_config(Preset.ITC)).run(Variant.DITTO)
    with pytest.raises(IncompatiblePlan):
        Simulator(w, preset_config(Preset.DIFFY)).run(Variant.TEMPORAL)
    sim = Simulator(w, preset_config(Preset.DITTO))
    with pytest.raises(PlanMismatch):
        sim.run_plan({1: {l: ExecMode.TEMPORAL for l in w.layers}})
    with pytest.raises(PlanMismatch):
        sim.run_plan({1: {}})


def test_empty_trace_gives_empty_report(unet):
    g = unet[0].graph
    rep = Simulator(Workload(g, 0, {}), preset_config(Preset.DITTO)).run(Variant.DITTO)
    assert rep.rows == [] and rep.total_cycles == 0 and rep.total_energy == 0


def test_report_additivity_and_determinism(model):
    _, _, w = model
    cfg = preset_config(Preset.DITTO, TOY_LANE_SCALE)
    a = Simulator(w, cfg).run(Variant.DITTO)
    b = Simulator(w, cfg).run(Variant.DITTO)
    assert a.to_csv() == b.to_csv() and a.summary() == b.summary()
    assert len(a.rows) == w.steps * len(w.layers)
    assert a.total_cycles == sum(r.fill_cycles + max(r.compute_cycles, r.enc_cycles, r.vpu_cycles)
                                 + r.stall_cycles + r.defo_cycles for r in a.rows)
    assert a.total_traffic == sum(r.traffic.weights + r.traffic.cur_in + r.traffic.prev_in + r.traffic.prev_out
                                  + r.traffic.out for r in a.rows)
    assert a.total_energy == pytest.approx(sum(r.energy for r in a.rows) + a.defo_energy)
    assert all(r.defo_cycles == 1 for r in a.rows)
    assert a.defo_updates == 3 * len(w.layers)
    assert a.defo_energy == pytest.approx(a.defo_updates * cfg.energy.e_sram_byte * 33 / 8)
    assert all(min(r.compute_cycles, r.stall_cycles, r.enc_cycles, r.vpu_cycles) >= 0 for r in a.rows)


def test_encoder_throughput_keeps_up(model):
    _, _, w = model
    sim = Simulator(w, preset_config(Preset.DITTO_PLUS, TOY_LANE_SCALE))
    for v in (Variant.TEMPORAL, Variant.DITTO, Variant.DITTO_PLUS):
        for r in sim.run(v).rows:
            assert r.enc_cycles - ENCODER_STAGES <= max(r.compute_cycles, r.vpu_cycles)


def test_defo_table_records_simulated_cycles(dit):
    _, _, w = dit
    sim = Simulator(w, preset_config(Preset.DITTO, TOY_LANE_SCALE))
    rep, table = sim.run_defo(Variant.DITTO)
    mp_all = sim.materialization(w.layers)
    for l in w.layers:
        direct1 = sim.cost(1, l, ExecMode.DIRECT, None).cycles
        assert table[l].cycle_act == min(direct1, 65535)
        assert table[l].cycle_diff == min(sim.cost(2, l, ExecMode.TEMPORAL, mp_all).cycles, 65535)
        # direct cost does not depend on the data, so step 2 gives the same oracle
        assert sim.cost(2, l, ExecMode.DIRECT, None).cycles == direct1
        assert rep.decisions[l] == (sim.cost(2, l, ExecMode.TEMPORAL, mp_all).cycles < direct1)
    assert 0 < sum(rep.decisions.values()) < len(w.layers)


def test_traffic_ratio_with_and_without_defo(unet):
    _, _, w = unet
    cfg = preset_config(Preset.DITTO, TOY_LANE_SCALE)
    direct = Simulator(w, cfg).run(Variant.DIRECT).total_traffic
    no_defo = Simulator(w, cfg, bypass=False).run(Variant.TEMPORAL).total_traffic
    with_defo = Simulator(w, cfg).run(Variant.DITTO).total_traffic
    assert no_defo / direct > 1
    assert with_defo / direct < no_defo / direct


def test_defo_removes_stalls_of_memory_bound_layers(unet):
    _, _, w = unet
    sim = Simulator(w, preset_config(Preset.DITTO, TOY_LANE_SCALE))
    temporal, ditto = sim.run(Variant.TEMPORAL), sim.run(Variant.DITTO)
    fixed = [(a.layer, a.stall_cycles) for a, b in zip(temporal.rows, ditto.rows)
             if a.step >= 3 and a.stall_cycles > 0 and b.mode == ExecMode.DIRECT and b.stall_cycles == 0]
    assert fixed
    assert any(w.graph[l].kind == NodeKind.ATTN_SCORE for l, _ in fixed)


def test_cambricon_transparent_boundaries_save_traffic(unet):
    _, _, w = unet
    cam = preset_config(Preset.CAMBRICON_D, TOY_LANE_SCALE)
    plain = preset_config(Preset.CAMBRICON_D, TOY_LANE_SCALE, transparent=())
    assert Simulator(w, cam).run(Variant.TEMPORAL).total_traffic < Simulator(w, plain).run(Variant.TEMPORAL).total_traffic


def test_dynamic_ditto_switches_one_way():
    from conftest import toy
    _, _, w = toy("toy-unet", drift_step=8, drift_scale=0.5)
    sim = Simulator(w, preset_config(Preset.DITTO, TOY_LANE_SCALE))
    rep = sim.run(Variant.DYNAMIC_DITTO)
    static = sim.run(Variant.DITTO)
    prev_direct = set()
    for k in range(3, w.steps + 1):
        direct = {l for l, m in rep.plan[k].items() if m == ExecMode.DIRECT}
        assert prev_direct <= direct
        prev_direct = direct
    assert prev_direct - {l for l, m in static.plan[3].items() if m == ExecMode.DIRECT}
    assert rep.total_cycles <= static.total_cycles


def test_ideal_plan_on_stationary_trace(model):
    _, _, w = model
    sim = Simulator(w, preset_config(Preset.DITTO, TOY_LANE_SCALE))
    ideal = sim.ideal()
    rows = [ideal[k] for k in range(3, w.steps + 1)]
    assert all(r == rows[0] for r in rows)
    decisions = sim.run(Variant.DITTO).decisions
    assert rows[0] == {l: ExecMode.TEMPORAL if d else ExecMode.DIRECT for l, d in decisions.items()}


def test_lane_scaling():
    full = preset_config(Preset.CAMBRICON_D)
    assert (full.n_lanes, full.outlier_lanes) == (38280, 2552)
    small = preset_config(Preset.CAMBRICON_D, 1 / 128)
    assert small.n_lanes == round(38280 / 128) and small.outlier_lanes == round(2552 / 128)
    cfgs = [preset_config(p) for p in Preset]
    assert len({(c.freq_ghz, c.sram_bytes, c.dram_bw) for c in cfgs}) == 1
    assert {p: PRESET_LANES[p][0] for p in Preset} == {
        Preset.ITC: 27648, Preset.DIFFY: 39398, Preset.CAMBRICON_D: 38280, Preset.DITTO: 39398,
        Preset.DITTO_PLUS: 39398}


def test_config_validation():
    with pytest.raises(ValueError):
        preset_config(Preset.DITTO, lane_bits=6)
    with pytest.raises(ValueError):
        preset_config(Preset.DITTO, energy={"e_mult4": 1.0, "e_mult8": 1.5})
    with pytest.raises(ValueError):
        preset_config(Preset.DITTO, dram_bw=0)


# --------------------------------------------------------------------------
# Monotonicity under class promotion
# --------------------------------------------------------------------------

# uniform-lane hardware; split low/full queues are covered separately below
CONFIGS = [preset_config(Preset.DITTO, n_lanes=7), preset_config(Preset.ITC, n_lanes=5),
           preset_config(Preset.DIFFY, n_lanes=3), preset_config(Preset.DITTO_PLUS, n_lanes=39398)]
DIFF_MODES = (ExecMode.TEMPORAL, ExecMode.SPATIAL)

counts_st = st.tuples(st.integers(0, 200), st.integers(0, 200), st.integers(0, 200))


def _metrics(counts, macs, cfg, mode):
    w = work(counts, macs=macs)
    c = layer_cost(w, mode, cfg) if mode in cfg.modes else None
    return (slots_for(DiffCounts(*counts), mode, cfg.lane_bits), bops_of(mac_split(w, mode)),
            None if c is None else c.compute_cycles, None if c is None else c.energy,
            None if c is None else c.cycles)


@settings(max_examples=1200)
@given(counts_st, st.integers(1, 50), st.sampled_from(range(len(CONFIGS))), st.sampled_from(DIFF_MODES),
       st.sampled_from(["zero-low", "low-full", "zero-full"]))
def test_promotion_never_decreases_cost(counts, macs, ci, mode, promo):
    z, l, f = counts
    src, dst = {"zero-low": (0, 1), "low-full": (1, 2), "zero-full": (0, 2)}[promo]
    if counts[src] == 0:
        return
    after = list(counts)
    after[src] -= 1
    after[dst] += 1
    before_m, after_m = _metrics(counts, macs, CONFIGS[ci], mode), _metrics(tuple(after), macs, CONFIGS[ci], mode)
    for b, a in zip(before_m, after_m):
        if b is not None:
            assert a >= b


def test_split_queues_are_not_monotone_in_cycles():
    # moving an element to the idle outlier queue can shorten the busier normal queue
    cfg = preset_config(Preset.CAMBRICON_D, n_lanes=6, outlier_lanes=2)
    before = layer_cost(work((0, 4, 0), macs=2), ExecMode.TEMPORAL, cfg)
    after = layer_cost(work((0, 3, 1), macs=2), ExecMode.TEMPORAL, cfg)
    assert (before.compute_cycles, after.compute_cycles) == (2, 1)
    assert after.energy > before.energy and after.bops > before.bops


@settings(max_examples=1000)
@given(counts_st, st.integers(1, 20), st.integers(1, 50), st.sampled_from(range(len(CONFIGS))),
       st.sampled_from(DIFF_MODES))
def test_adding_zeros_never_increases_compute(counts, extra, macs, ci, mode):
    cfg = CONFIGS[ci]
    if mode not in cfg.modes:
        return
    more = (counts[0] + extra, counts[1], counts[2])
    assert (layer_cost(work(more, macs=macs), mode, cfg).compute_cycles
            <= layer_cost(work(counts, macs=macs), mode, cfg).compute_cycles)
