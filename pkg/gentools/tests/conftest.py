import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import pytest

from gentools import crosscheck, torchvit


@pytest.fixture(scope="session", autouse=True)
def engine_available():
    proc = crosscheck.run_engine(["--version"])
    assert proc.returncode == 0, (
        "the vitfault engine must be installed (pip install -e . in the "
        "repository root) before running the gentools suite")


@pytest.fixture(scope="session")
def tiny_config():
    return torchvit.PRESETS["toy-tiny"]


@pytest.fixture(scope="session")
def exported(tmp_path_factory, tiny_config):
    """toy-tiny seed-0 checkpoint and an 8-image dataset."""
    out = tmp_path_factory.mktemp("export")
    model_path = out / "model.vtft"
    torchvit.export_toy_model(tiny_config, seed=0, out_path=model_path)
    data_path = out / "dataset.vtft"
    torchvit.export_dataset(tiny_config, n=8, seed=1, out_path=data_path)
    return model_path, data_path
