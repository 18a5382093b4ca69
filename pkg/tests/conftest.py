import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gpforecast.history import build_bank
from gpforecast.ingest import normalize, synth_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus40():
    return [normalize(w) for w in synth_corpus(40, seed=7, noise_sigma=0.1, shape_jitter=0.2)]


@pytest.fixture(scope="session")
def bank40(corpus40):
    return build_bank(corpus40)


@pytest.fixture(scope="session")
def small_bank():
    return build_bank([normalize(w) for w in synth_corpus(4, seed=3)])
