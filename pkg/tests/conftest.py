"""Conftest for pytest fixtures and configuration."""

import io
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.activation import default_table
from src.display.report_display import ReportDisplay
from src.field import Ensemble
from src.flow import FlowConfig
from src.functionals import QuadratureSet
from src.potentials import PotentialSpec
from src.utils.defaults import ENV_PREFIX

CONFIG_DIR = Path(__file__).parent / "fixtures" / "configs"


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch, tmp_path):
    """No SPECTRALFLOW_ overrides or .env file leak in from the developer shell."""
    for name in list(os.environ):
        if name.startswith(ENV_PREFIX):
            monkeypatch.delenv(name)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def config_dir():
    """Directory of the fixture config files."""
    return CONFIG_DIR


@pytest.fixture
def tiny_config_path():
    return CONFIG_DIR / "tiny_run.cfg"


@pytest.fixture
def table():
    """Shared default mollifier table."""
    return default_table()


@pytest.fixture
def rng():
    """Seeded generator; every test gets the same stream."""
    return np.random.default_rng(1234)


@pytest.fixture
def grid2():
    """Coarse d=2 trapezoid grid."""
    return QuadratureSet.tensor_grid(2, 32)


@pytest.fixture
def cos1d():
    return PotentialSpec.parse("cos1d:100")


def make_ensemble(rng, m=20, d=2, tau=20.0):
    """Random ensemble with biases spread over [-sqrt(d)-2, sqrt(d)+2]."""
    reach = np.sqrt(d) + 2.0
    return Ensemble(a=rng.normal(1.0, 0.5, m), w=rng.standard_normal((m, d)),
                    b=rng.uniform(-reach, reach, m), tau=tau)


def normalized(u, q):
    """u rescaled to unit norm on q."""
    values = u.values(q.points)
    return u.scaled(1.0 / np.sqrt(np.dot(q.weights, values * values)))


@pytest.fixture
def ensemble(rng):
    """Random m=20, d=2 ensemble."""
    return make_ensemble(rng)


@pytest.fixture
def unit_ensemble(ensemble, grid2):
    """Random ensemble with ||u|| = 1 on grid2."""
    return normalized(ensemble, grid2)


@pytest.fixture
def tiny_config():
    """Small validated run config (seconds to run)."""
    return FlowConfig(
        d=2, potential=PotentialSpec.parse("cos1d:10"), m=16, steps=10, batch_size=32,
        dataset_size=128, seed=7, eval_every=5, grid_n=8, table_resolution=256,
    )


@pytest.fixture
def ensemble_factory():
    """make_ensemble(rng, m=20, d=2, tau=20.0)."""
    return make_ensemble


@pytest.fixture
def normalize():
    """normalized(u, q)."""
    return normalized


@pytest.fixture
def plain_display():
    """ReportDisplay probing a non-TTY stream, so output is unstyled."""
    return ReportDisplay(stream=io.StringIO())
