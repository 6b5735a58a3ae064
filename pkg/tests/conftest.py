import importlib

import numpy as np
import pytest

from hiertraj import backend
from hiertraj.dynamics import ArmModel, DiscreteSystem, gravity_compensation
from hiertraj.tasks import TaskSpec, TaskStack

ACCEPTANCE_LINES = []

try:
    importlib.import_module("hiertraj._kernel")
    HAVE_KERNEL = True
except ImportError:
    HAVE_KERNEL = False

BACKENDS = ["python"] + (["compiled"] if HAVE_KERNEL else [])


@pytest.fixture(params=BACKENDS)
def impl(request):
    """Each dynamics implementation, for kernel-level tests."""
    if request.param == "python":
        return backend.fallback
    return importlib.import_module("hiertraj._kernel")


@pytest.fixture(params=BACKENDS)
def active_backend(request, monkeypatch):
    """Route the public API through each implementation in turn."""
    mod = backend.fallback if request.param == "python" else importlib.import_module("hiertraj._kernel")
    monkeypatch.setattr(backend, "impl", mod)
    return request.param


def canonical_problem():
    model = ArmModel.uniform(3)
    sys = DiscreteSystem(model)
    q0 = np.array([np.pi / 2, -np.pi / 2, 0.0])
    x_s = np.concatenate([q0, np.zeros(3)])
    U0 = np.tile(gravity_compensation(q0, model), sys.N)
    stack = TaskStack([
        TaskSpec("reach", 1, body_point=3, target=[1.2, 0.6]),
        TaskSpec("reach", 2, body_point=2, target=[0.0, 0.9]),
        TaskSpec("reach", 3, body_point=1, target=[-0.3, 0.3], effort=1e-4),
    ])
    return model, sys, x_s, U0, stack


@pytest.fixture
def canonical():
    return canonical_problem()


@pytest.fixture
def arm3():
    return ArmModel.uniform(3)


def random_state(rng, model, speed=1.0):
    nl = model.link_count
    return np.concatenate([rng.uniform(-np.pi, np.pi, nl), rng.normal(0, speed, nl)])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
