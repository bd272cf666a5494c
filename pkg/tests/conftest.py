import numpy as np
import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: end-to-end acceptance checks (slower, run by default)"
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
