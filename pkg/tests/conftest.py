import os

# keep BLAS single-threaded: trial-level parallelism is what we scale,
# and nested thread pools only add sync overhead on small matrices
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

from vitfault import toy


@pytest.fixture(scope="session")
def tiny_config():
    return toy.PRESETS["toy-tiny"]


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return toy.make_toy_model(tiny_config, seed=0)


@pytest.fixture(scope="session")
def tiny_batch(tiny_config, tiny_model):
    return toy.make_synthetic_batch(tiny_config, n=16, seed=1, model=tiny_model,
                                    pool_factor=10)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=np.uint64(12345)))
