import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from orchardgraph.synth import OrchardSpec, generate_orchard  # noqa: E402

# acceptance outcomes, printed once more in the terminal summary
ACCEPTANCE = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_orchard():
    return generate_orchard(OrchardSpec(rows=1, per_row=2, seed=3))


@pytest.fixture(scope="session")
def noisy_orchard():
    return generate_orchard(OrchardSpec(rows=1, per_row=2, seed=3, noise=0.05))
