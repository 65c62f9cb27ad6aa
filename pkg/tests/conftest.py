import numpy as np
import pytest

from vete.optim import TrainingSet
from vete.synthetic import SyntheticSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synthetic():
    """A few hundred examples: enough for training to move, fast enough for unit tests."""
    spec = SyntheticSpec(n_examples=300, n_sts=120, n_binary=60, seed=5)
    records, table, sts, binary = generate(spec)
    return TrainingSet(records, table), sts, binary


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
