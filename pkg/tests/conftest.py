import numpy as np
import pytest

from eegsz import ingest


@pytest.fixture(scope="session")
def synth_manifest():
    recs = ingest.synth_generate(20, 4, 1024, 250.0, seed=0)
    return ingest.build_manifest(recs, 1.024, "synthetic")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
