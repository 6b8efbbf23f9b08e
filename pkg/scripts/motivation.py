#!/usr/bin/env python3
"""Operand statistics of the toy models: similarity, zeros, value range and BOPs.

    python3 scripts/motivation.py --model toy-unet --steps 20 --out results/motivation.csv
"""

import argparse
from pathlib import Path

from ditto.hwsim import Workload
from ditto.metrics import long_csv, range_report, relative_bops, similarity_report, trace_histograms
from ditto.refmodel import ModelSpec, SamplerConfig, build_model, run_sampler
from ditto.replay import QuantizedTrace


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", nargs="+", default=["toy-unet", "toy-dit"])
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional long-format CSV path")
    args = ap.parse_args()

    rows = []
    for kind in args.model:
        spec = ModelSpec.default(kind, seed=args.seed)
        trace = run_sampler(build_model(spec), SamplerConfig(steps=args.steps, seed=args.seed), spec=spec)
        qt = QuantizedTrace(trace)
        sim, rng, hist = similarity_report(trace), range_report(qt), trace_histograms(qt)
        bops = relative_bops(Workload.from_trace(qt))
        print(f"== {kind}")
        print(f"  cosine      temporal {sim.temporal_mean:.4f}  row {sim.row_mean:.4f}  "
              f"window {sim.window_mean if sim.window_mean is not None else float('nan'):.4f}")
        for name in ("activation", "temporal", "spatial"):
            f = getattr(hist, name).fractions
            print(f"  bits {name:10s} 0:{f[0]:.3f}  1-4:{f[1]:.3f}  5-8:{f[2]:.3f}")
        summ = rng.summary()
        print(f"  range ratio mean {summ['mean_layer_ratio']:.2f}, narrower on {summ['fraction_layers_narrower']:.0%}")
        print("  relative BOPs " + "  ".join(f"{k} {v:.3f}" for k, v in bops.summary().items()))
        for part in (sim, rng, hist, bops):
            rows += list(part.rows(kind))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(long_csv(rows))


if __name__ == "__main__":
    main()
