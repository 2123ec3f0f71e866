import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    # desk-scale configs deliberately sit below the searched hyperparameter ranges
    config.addinivalue_line("filterwarnings", "ignore:.*outside searched range:UserWarning")
