import sys
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_set():
    """Three classes, two SNRs, 40 records per stratum."""
    from tshn.sigsynth import DatasetRequest, generate_dataset

    _, ds = generate_dataset(DatasetRequest(classes=("BPSK", "QPSK", "QAM16"), per_class=40, snrs=(10, 18), seed=3))
    return ds


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
