"""Command-line entry point: trace generation, analysis, simulation, comparison.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 invariant violation (difference-domain output differs from direct output).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .diffengine import ExecMode
from .flow import NonLinearKind, Variant, plan_to_dict
from .hwsim import (
    TOY_LANE_SCALE,
    EnergyConstants,
    HwConfig,
    IncompatiblePlan,
    PlanMismatch,
    Preset,
    Simulator,
    Workload,
    check_compatible,
    compare_presets,
    preset_config,
)
from .metrics import long_csv, range_report, relative_bops, similarity_report, trace_histograms
from .refmodel import (
    ModelSpec,
    SamplerConfig,
    SamplerError,
    SpecError,
    TraceFormatError,
    build_model,
    export_trace,
    import_trace,
    run_sampler,
)
from .replay import QuantizedTrace, replay

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4

CSV_SCHEMAS = """\
CSV schemas (every file also carries a trailing config_digest column):
  analyze   similarity.csv, range.csv, bitwidth.csv, bops.csv
            model,layer,step,metric,value  (long format)
  simulate  report.csv
            step,layer,mode,compute_cycles,stall_cycles,enc_cycles,vpu_cycles,
            defo_cycles,total_cycles,traffic_weights,traffic_cur_in,
            traffic_prev_in,traffic_prev_out,traffic_out,energy,bops
  compare   compare.csv
            preset,variant,cycles,cycles_norm,speedup,energy_norm,
            traffic_norm,bops_norm
"""


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


@dataclass
class QuantSettings:
    bits: int = 8
    calibration: str = "absmax-first-step"

    def validate(self):
        if self.bits != 8 or self.calibration != "absmax-first-step":
            raise UsageError("only 8-bit absmax first-step calibration is supported")


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    quant: dict = field(default_factory=dict)
    variant: str = "ditto"
    preset: str = "ditto"
    hw: dict = field(default_factory=dict)
    lane_scale: float = TOY_LANE_SCALE
    out_dir: str = "."
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {"model": ModelSpec, "sampler": SamplerConfig, "quant": QuantSettings}


def _check_keys(d: dict, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config key(s) in {where}: {', '.join(unknown)}")


def load_config(path: Optional[str]) -> ExperimentConfig:
    if not path:
        return ExperimentConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    _check_keys(doc, [f.name for f in fields(ExperimentConfig)], "config")
    for sec, cls in _SECTIONS.items():
        if sec in doc:
            if not isinstance(doc[sec], dict):
                raise UsageError(f"config section {sec} must be an object")
            _check_keys(doc[sec], [f.name for f in fields(cls)], sec)
    if "hw" in doc:
        _check_keys(doc["hw"], [f.name for f in fields(HwConfig)], "hw")
        if "energy" in doc["hw"]:
            _check_keys(doc["hw"]["energy"], [f.name for f in fields(EnergyConstants)], "hw.energy")
    return ExperimentConfig(**doc)


def resolve_seed(flag: Optional[int], cfg: ExperimentConfig) -> int:
    if flag is not None:
        return flag
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get("DITTO_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"DITTO_SEED must be an integer, got {env!r}")
    return 0


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"


def write_config(cfg: ExperimentConfig, path) -> str:
    d = cfg.digest()
    atomic_write(path, _json({"config": cfg.to_dict(), "config_digest": d}))
    return d


def hw_from_config(cfg: ExperimentConfig, hw_path: Optional[str] = None) -> HwConfig:
    overrides = dict(cfg.hw)
    if hw_path:
        try:
            doc = json.loads(Path(hw_path).read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"hardware config {hw_path} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise UsageError("hardware config must be a JSON object")
        _check_keys(doc, [f.name for f in fields(HwConfig)], "hardware config")
        overrides.update(doc)
    if "modes" in overrides:
        overrides["modes"] = frozenset(ExecMode(m) for m in overrides["modes"])
    if "transparent" in overrides:
        overrides["transparent"] = tuple(NonLinearKind(t) for t in overrides["transparent"])
    try:
        return preset_config(Preset(cfg.preset), cfg.lane_scale, **overrides)
    except (ValueError, TypeError) as e:
        raise UsageError(f"invalid hardware configuration: {e}") from e


def _load_trace(path: str):
    p = Path(path)
    if not p.is_file() or p.stat().st_size == 0:
        raise OSError(f"trace file {path} is missing or empty")
    return import_trace(p)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_gen_trace(args, cfg: ExperimentConfig) -> int:
    if args.model:
        cfg.model = {**cfg.model, "kind": args.model}
    kind = cfg.model.get("kind", "toy-unet")
    model = {k: v for k, v in cfg.model.items() if k != "kind"}
    seed = resolve_seed(args.seed, cfg)
    cfg.seed = seed
    sampler = dict(cfg.sampler)
    if args.steps is not None:
        sampler["steps"] = args.steps
    if args.drift_step is not None:
        sampler["drift_step"] = args.drift_step
    sampler["seed"] = seed
    model.setdefault("seed", seed)
    if "schedule" in sampler and sampler["schedule"] is not None:
        sampler["schedule"] = tuple(sampler["schedule"])
    cfg.sampler = sampler
    try:
        spec = ModelSpec.default(kind, **model)
        spec.validate()
        scfg = SamplerConfig(**sampler)
        scfg.validate()
    except (SpecError, SamplerError, TypeError) as e:
        raise UsageError(str(e)) from e
    trace = run_sampler(build_model(spec), scfg, spec=spec)
    out = Path(args.out)
    with tempfile.TemporaryDirectory(dir=out.parent if out.parent.exists() else None) as td:
        tmp = Path(td) / "trace"
        dig = export_trace(trace, tmp)
        atomic_write(out, tmp.read_bytes())
    cdig = cfg.digest()
    atomic_write(str(out) + ".config.json",
                 _json({"config": cfg.to_dict(), "config_digest": cdig, "trace_digest": dig}))
    print(dig)
    return EXIT_OK


def cmd_analyze(args, cfg: ExperimentConfig) -> int:
    trace = _load_trace(args.trace)
    out = Path(args.out_dir or cfg.out_dir)
    cfg.out_dir = str(out)
    d = write_config(cfg, out / "config.json")
    model = trace.spec.kind if trace.spec else "model"
    qt = QuantizedTrace(trace)
    extra = {"config_digest": d}
    sim = similarity_report(trace)
    rng = range_report(qt)
    hist = trace_histograms(qt)
    bops = relative_bops(Workload.from_trace(qt))
    atomic_write(out / "similarity.csv", long_csv(sim.rows(model), extra))
    atomic_write(out / "range.csv", long_csv(rng.rows(model), extra))
    atomic_write(out / "bitwidth.csv", long_csv(hist.rows(model), extra))
    atomic_write(out / "bops.csv", long_csv(bops.rows(model), extra))
    summary = {"model": model, "config_digest": d, "similarity": sim.summary(), "range": rng.summary(),
               "bitwidth": hist.summary(), "relative_bops": bops.summary()}
    atomic_write(out / "analysis.json", _json(summary))
    print(_json({k: summary[k] for k in ("similarity", "relative_bops")}), end="")
    return EXIT_OK


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    if args.variant:
        cfg.variant = args.variant
    if args.preset:
        cfg.preset = args.preset
    if args.lane_scale is not None:
        cfg.lane_scale = args.lane_scale
    try:
        variant = Variant(cfg.variant)
        Preset(cfg.preset)
    except ValueError as e:
        raise UsageError(str(e)) from e
    hw = hw_from_config(cfg, args.hw_config)
    check_compatible(variant, hw)
    trace = _load_trace(args.trace)
    out = Path(args.out_dir or cfg.out_dir)
    cfg.out_dir = str(out)
    d = write_config(cfg, out / "config.json")
    qt = QuantizedTrace(trace)
    sim = Simulator(Workload.from_trace(qt), hw)
    rep = sim.run(variant)
    check = replay(qt, rep.plan)
    doc = rep.summary()
    doc.update({"config_digest": d, "hw": hw.to_dict(), "verdict": check.verdict,
                "checked_layer_steps": check.checked,
                "mismatches": [list(m) for m in check.mismatches],
                "plan": plan_to_dict(rep.plan)})
    if variant in (Variant.IDEAL, Variant.IDEAL_PLUS):
        doc["oracle_plan"] = doc["plan"]
    atomic_write(out / "report.csv", rep.to_csv({"config_digest": d}))
    atomic_write(out / "report.json", _json(doc))
    print(f"{variant.value} on {hw.name}: {rep.total_cycles} cycles, verdict {check.verdict}")
    if not check.exact:
        print(f"error: {len(check.mismatches)} layer-steps differ from the direct path", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_compare(args, cfg: ExperimentConfig) -> int:
    if args.lane_scale is not None:
        cfg.lane_scale = args.lane_scale
    trace = _load_trace(args.trace)
    out = Path(args.out_dir or cfg.out_dir)
    cfg.out_dir = str(out)
    d = write_config(cfg, out / "config.json")
    overrides = {k: v for k, v in cfg.hw.items() if k not in ("name", "n_lanes", "lane_bits", "outlier_lanes",
                                                                 "modes", "transparent")}
    cm = compare_presets(Workload.from_trace(QuantizedTrace(trace)), cfg.lane_scale, **overrides)
    atomic_write(out / "compare.csv", cm.to_csv({"config_digest": d}))
    doc = cm.to_dict()
    doc["config_digest"] = d
    atomic_write(out / "compare.json", _json(doc))
    hit, tot = cm.defo_accuracy
    for p, r in cm.rows.items():
        print(f"{p:12s} {r['variant']:11s} cycles {r['cycles_norm']:.3f} energy {r['energy_norm']:.3f} "
              f"traffic {r['traffic_norm']:.3f}")
    print(f"Defo accuracy {hit}/{tot}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ditto",
        description="Temporal-difference processing study: traces, analyses, and accelerator simulation.",
        epilog=CSV_SCHEMAS + "\nSeed precedence: --seed, config 'seed', $DITTO_SEED, 0.",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="run the toy sampler and write a trace file")
    g.add_argument("--model", choices=["toy-unet", "toy-dit"], help="model kind (default toy-unet)")
    g.add_argument("--steps", type=int, help="denoising steps T >= 2 (default 20)")
    g.add_argument("--seed", type=int, help="seed for weights, latents and noise")
    g.add_argument("--drift-step", type=int, help="step at which the perturbation scale changes")
    g.add_argument("--out", required=True, help="output trace path")
    g.set_defaults(func=cmd_gen_trace)

    a = sub.add_parser("analyze", help="similarity, range, bit-width and BOPs reports")
    a.add_argument("--trace", required=True)
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="simulate one variant on one hardware configuration")
    s.add_argument("--trace", required=True)
    s.add_argument("--variant", choices=[v.value for v in Variant], help="execution variant (default ditto)")
    hw = s.add_mutually_exclusive_group()
    hw.add_argument("--preset", choices=[q.value for q in Preset], help="hardware preset (default ditto)")
    hw.add_argument("--hw-config", help="JSON file of hardware fields overriding the ditto preset")
    s.add_argument("--lane-scale", type=float, help=f"lane-count multiplier (default {TOY_LANE_SCALE})")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="all presets with their matching variants")
    c.add_argument("--trace", required=True)
    c.add_argument("--lane-scale", type=float, help=f"lane-count multiplier (default {TOY_LANE_SCALE})")
    c.add_argument("--out-dir")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        QuantSettings(**cfg.quant).validate()
        return args.func(args, cfg)
    except (UsageError, IncompatiblePlan, PlanMismatch, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TraceFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolation as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
