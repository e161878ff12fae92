import pytest

from shiva.experiments.config import ToyTrainConfig
from shiva.experiments.toy_train import run_toy_train


@pytest.fixture(scope="session")
def default_toy_report():
    """One full default toy_train run (about half a minute), shared across tests."""
    return run_toy_train(ToyTrainConfig())
