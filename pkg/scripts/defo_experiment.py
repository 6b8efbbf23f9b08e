#!/usr/bin/env python3
"""Defo decisions against the per-step ideal oracle, on stationary and drifting traces.

    python3 scripts/defo_experiment.py --drift-step 8 --drift-scale 0.5
"""

import argparse

from ditto.flow import Variant, plan_agreement
from ditto.hwsim import TOY_LANE_SCALE, Preset, Simulator, Workload, preset_config
from ditto.refmodel import ModelSpec, SamplerConfig, build_model, run_sampler
from ditto.replay import QuantizedTrace, replay


def workload(kind, steps, seed, **sampler):
    spec = ModelSpec.default(kind, seed=seed)
    trace = run_sampler(build_model(spec), SamplerConfig(steps=steps, seed=seed, **sampler), spec=spec)
    qt = QuantizedTrace(trace)
    return qt, Workload.from_trace(qt)


def report(label, qt, w, cfg):
    sim = Simulator(w, cfg)
    static, table = sim.run_defo(Variant.DITTO)
    dynamic = sim.run(Variant.DYNAMIC_DITTO)
    ideal = sim.run(Variant.IDEAL)
    hit, tot = plan_agreement(static.plan, sim.ideal())
    diff_layers = sum(static.decisions.values())
    print(f"== {label}")
    print(f"  layers on differences {diff_layers}/{len(static.decisions)}, agreement with oracle {hit}/{tot}")
    print(f"  cycles static {static.total_cycles}  dynamic {dynamic.total_cycles}  ideal {ideal.total_cycles}")
    print(f"  performance vs ideal: static {ideal.total_cycles / static.total_cycles:.4f}  "
          f"dynamic {ideal.total_cycles / dynamic.total_cycles:.4f}")
    for v, rep in (("static", static), ("dynamic", dynamic), ("ideal", ideal)):
        assert replay(qt, rep.plan).exact, f"{v} plan is not bit-exact"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", nargs="+", default=["toy-unet", "toy-dit"])
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lane-scale", type=float, default=TOY_LANE_SCALE)
    ap.add_argument("--drift-step", type=int, default=8)
    ap.add_argument("--drift-scale", type=float, default=0.5)
    args = ap.parse_args()

    cfg = preset_config(Preset.DITTO, args.lane_scale)
    for kind in args.model:
        report(f"{kind} stationary", *workload(kind, args.steps, args.seed), cfg)
        report(f"{kind} drift at step {args.drift_step} x{args.drift_scale}",
               *workload(kind, args.steps, args.seed, drift_step=args.drift_step, drift_scale=args.drift_scale), cfg)


if __name__ == "__main__":
    main()
