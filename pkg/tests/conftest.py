import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_desk():
    """A coarse desk scene that simulates in a couple of seconds."""
    from ropecloth.reference_cloth import DeskScene

    return DeskScene(nu=8, nv=8, chain_columns=(0, 4, 7), bone_rows=(0, 3, 7), settle_time=0.5)


@pytest.fixture(scope="session")
def small_dataset(small_desk):
    from ropecloth.reference_cloth import generate_dataset

    return generate_dataset(small_desk, 40, seed=3)
