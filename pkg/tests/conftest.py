import math

import numpy as np
import pytest

from eisdesign.ecm import REFERENCE
from eisdesign.noise import NoiseModel
from eisdesign.synth import logspace_grid

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def truth():
    return REFERENCE


@pytest.fixture(scope="session")
def model():
    return NoiseModel.uniform(1.0, 1.0)


@pytest.fixture(scope="session")
def grid():
    return logspace_grid(1e-2, 1e4, 10)


def random_theta(rng, spread=0.3):
    """Reference values perturbed multiplicatively; exponents stay strictly interior."""
    x = REFERENCE.to_array() * np.exp(spread * rng.uniform(-1, 1, 10))
    x[2] = rng.uniform(-0.95, -0.05)
    x[5] = rng.uniform(0.5, 0.98)
    x[8] = rng.uniform(0.5, 0.98)
    return x


def log_uniform(rng, lo, hi, size=None):
    return 10 ** rng.uniform(math.log10(lo), math.log10(hi), size)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
