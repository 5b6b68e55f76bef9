import numpy as np
import pytest

from fcstg.data import dataset_from, synth_dedt, synth_rul

# Lines reported by the acceptance suite, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dedt():
    return dataset_from(*synth_dedt(3, 4, 24, 30, f=6))


@pytest.fixture(scope="session")
def tiny_rul():
    return dataset_from(*synth_rul(3, 3, 12, 60, max_rul=20.0, life=(20, 40), step=2))
