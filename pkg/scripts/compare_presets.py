#!/usr/bin/env python3
"""Cycles, energy and traffic of every hardware preset, normalized to ITC.

    python3 scripts/compare_presets.py --lane-scale 0.0078125
"""

import argparse

from ditto.hwsim import TOY_LANE_SCALE, Workload, compare_presets
from ditto.refmodel import ModelSpec, SamplerConfig, build_model, run_sampler
from ditto.replay import QuantizedTrace


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", nargs="+", default=["toy-unet", "toy-dit"])
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lane-scale", type=float, nargs="+", default=[TOY_LANE_SCALE])
    args = ap.parse_args()

    for kind in args.model:
        spec = ModelSpec.default(kind, seed=args.seed)
        trace = run_sampler(build_model(spec), SamplerConfig(steps=args.steps, seed=args.seed), spec=spec)
        w = Workload.from_trace(QuantizedTrace(trace))
        for scale in args.lane_scale:
            cm = compare_presets(w, scale)
            hit, tot = cm.defo_accuracy
            print(f"== {kind}, lane scale {scale:g}, Defo accuracy {hit}/{tot}")
            print(f"  {'preset':12s} {'variant':11s} {'speedup':>8s} {'energy':>8s} {'traffic':>8s} {'bops':>8s}")
            for p, r in cm.rows.items():
                print(f"  {p:12s} {r['variant']:11s} {r['speedup']:8.3f} {r['energy_norm']:8.3f} "
                      f"{r['traffic_norm']:8.3f} {r['bops_norm']:8.3f}")
            for k, v in cm.reference.items():
                print(f"  {k}: {v:.4f}" if isinstance(v, float) else f"  {k}: {v}")


if __name__ == "__main__":
    main()
