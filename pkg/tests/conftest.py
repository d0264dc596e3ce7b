import numpy as np
import pytest

from errorcalc import models, priors
from errorcalc.structure import from_model


@pytest.fixture
def squared():
    """N(theta, 1) on ]-1, 1[ minus {0}, uniform prior, psi = theta^2."""
    model = models.normal_location(-1.0, 1.0, excluded=[0.0])
    prior = priors.uniform(model.domain)
    psi = models.square_map(model.domain)
    return model, prior, psi, from_model(model, prior)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("]")[1].split(".")[0])):
            terminalreporter.write_line(line)
