import numpy as np
import pytest

from polyelast.energy import default_model
from polyelast.fe import Discretization
from polyelast.mesh import build_uniform
from polyelast.runner import initial_state, parse_config
from polyelast.stepper import run

PERTURBED = "mesh.n = 2\ntime.dt = 1e-3\ntime.t_final = 0.1\ninitial.preset = perturbed\n"


@pytest.fixture(scope="session")
def disc2():
    return Discretization(build_uniform(2), 1)


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def perturbed_cfg():
    return parse_config(PERTURBED)


@pytest.fixture(scope="session")
def perturbed_run(disc2, model, perturbed_cfg):
    """The 100-step perturbed run shared by several checks."""
    s0 = initial_state(perturbed_cfg, disc2)
    return run(disc2, model, s0, 1e-3, 0.1)


@pytest.fixture(scope="session")
def short_run(disc2, model, perturbed_cfg):
    s0 = initial_state(perturbed_cfg, disc2)
    return run(disc2, model, s0, 1e-3, 1e-2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """``report(label, ok, detail)`` records one acceptance line and returns ``ok``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def _report(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
