import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from model_service.dynamics import VarModel  # noqa: E402
from utils.fixture import make_synthetic_panel, write_fixture  # noqa: E402


@pytest.fixture(scope="session")
def synthetic_panel():
    return make_synthetic_panel(n_days=200, seed=7)


@pytest.fixture
def fixture_files(tmp_path):
    return write_fixture(str(tmp_path / "data"), n_days=200, seed=7)


@pytest.fixture
def toy_model():
    """VAR(1) nhỏ nhất có nghĩa: [log V⁰, log V¹, Roll¹]."""
    return VarModel(
        mode=np.array([np.log(20.0), np.log(21.0), 0.0]),
        mu=np.zeros(3),
        a_matrix=np.array([[0.9, 0.05, 0.0], [0.1, 0.85, 0.0], [0.0, 0.0, 0.5]]),
        sigma=np.diag([0.0025, 0.0016, 0.01]),
    ).with_stationary()
