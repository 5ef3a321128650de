import numpy as np
import pytest

from glucast.data import SynthConfig, filter_artifacts, split_by_session, synth_generate, \
    windows_from_series


@pytest.fixture(scope="session")
def tiny_splits():
    """Small synthetic dataset split by session, shared across tests."""
    series = synth_generate(SynthConfig(patients=3, sessions_per_patient=3,
                                        days_per_session=0.5), seed=7)
    series = [seg for s in series for seg in filter_artifacts(s)]
    return split_by_session(series)


@pytest.fixture(scope="session")
def tiny_windows(tiny_splits):
    return windows_from_series(tiny_splits.train, min_history=10, horizon=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
