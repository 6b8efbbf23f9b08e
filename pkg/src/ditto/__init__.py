"""Temporal-difference processing for quantized diffusion inference."""

from .diffengine import DiffClass, DiffCounts, ExecMode
from .flow import LayerGraph, NodeKind, NonLinearKind, Variant
from .hwsim import HwConfig, Preset, Simulator, Workload, preset_config
from .qtensor import LayerDesc, QuantScale, QuantTensor, quantize
from .refmodel import ModelSpec, SamplerConfig, build_model, run_sampler
from .replay import QuantizedTrace, replay

__version__ = "0.1.0"
