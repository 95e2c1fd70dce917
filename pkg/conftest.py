from pathlib import Path

import numpy as np
import pytest

import utils.plsr
from utils.eeg import synth_epochs
from utils.io import write_epochs
from utils.manifold import qf

FIXTURES = Path(__file__).parent / "tests" / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def spd():
    """Factory for well conditioned random SPD matrices."""
    def make(r, rng):
        a = rng.standard_normal((r, r))
        return a @ a.T + r * np.eye(r)
    return make


@pytest.fixture
def spread_z():
    """Factory for N x M matrices with a prescribed singular spectrum."""
    def make(n, m, singular, seed):
        rng = np.random.default_rng(seed)
        k = len(singular)
        left = qf(rng.standard_normal((n, k)))
        right = qf(rng.standard_normal((m, k)))
        return left @ np.diag(singular) @ right.T
    return make


@pytest.fixture
def small_epochs():
    return synth_epochs(trials=40, channels=4, samples=100, classes=2, snr=1.0, seed=7)


@pytest.fixture
def epoch_dir(tmp_path, small_epochs):
    return write_epochs(small_epochs, tmp_path / "epochs")


@pytest.fixture(autouse=True)
def monotone_fit_traces(monkeypatch):
    """Every optimizer run reached through a fit must have a non-increasing cost trace."""
    original = utils.plsr.minimize

    def checked(problem, init, config):
        point, trace = original(problem, init, config)
        costs = np.asarray(trace.costs)
        assert np.all(np.diff(costs) <= 0), f"accepted step increased the cost: {costs.tolist()}"
        return point, trace

    monkeypatch.setattr(utils.plsr, "minimize", checked)
