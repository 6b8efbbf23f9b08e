import pytest
from hypothesis import settings

from ditto.hwsim import Workload
from ditto.refmodel import ModelSpec, SamplerConfig, build_model, run_sampler
from ditto.replay import QuantizedTrace

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

_CACHE = {}


def toy(kind, steps=20, **sampler):
    key = (kind, steps, tuple(sorted(sampler.items())))
    if key not in _CACHE:
        spec = ModelSpec.default(kind)
        trace = run_sampler(build_model(spec), SamplerConfig(steps=steps, **sampler), spec=spec)
        qt = QuantizedTrace(trace)
        _CACHE[key] = (trace, qt, Workload.from_trace(qt))
    return _CACHE[key]


@pytest.fixture(scope="session")
def unet():
    return toy("toy-unet")


@pytest.fixture(scope="session")
def dit():
    return toy("toy-dit")


@pytest.fixture(scope="session", params=["toy-unet", "toy-dit"])
def model(request):
    return toy(request.param)


# one line per acceptance criterion, shown after the run even when output is captured
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
