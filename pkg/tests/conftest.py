import numpy as np
import pytest
import torch
from hypothesis import settings

from exchangecast import synthgen as sg

torch.set_num_threads(1)

settings.register_profile("default", deadline=None, max_examples=1000)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_ds():
    """Four-week corpus: enough for a short training run, too short for a test split at 7 days."""
    return sg.simulate(sg.default_scenario(4 * sg.BINS_PER_WEEK), 0)


@pytest.fixture(scope="session")
def default_ds():
    return sg.simulate(sg.default_scenario(), 0)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mini_ds():
    """Default scenario with two opinions: 14 streams, full 12-week length."""
    return sg.simulate(sg.default_scenario(n_opinions=2), 0)


@pytest.fixture(scope="session")
def mini_result(mini_ds):
    from exchangecast.harness.config import TrainConfig
    from exchangecast.harness.train import train
    return train(TrainConfig(epochs=1), mini_ds)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow; trains many models)")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
