import json

import numpy as np
import pytest

from auxcl import backend, engine
from auxcl.synthetic import gen_synthetic


def pytest_addoption(parser):
    parser.addoption("--backend", default=None,
                     help="force kernel backend: numba or numpy")


@pytest.fixture(autouse=True, scope="session")
def _select_backend(request):
    forced = request.config.getoption("--backend")
    if forced:
        backend.set_backend(forced)
    yield


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The default synthetic stream, written once per session."""
    root = tmp_path_factory.mktemp("synth")
    gen_synthetic().write(root)
    return root


@pytest.fixture(scope="session")
def default_config(default_dataset):
    cfg = engine.load_config(None)
    cfg["data"]["root"] = str(default_dataset)
    return cfg


@pytest.fixture(scope="session")
def loaded_default(default_config):
    return engine.load_data(default_config)


@pytest.fixture(scope="session")
def default_run(default_config, loaded_default):
    """One full default run shared by read-only assertions."""
    return engine.run_stream(clone(default_config), data=loaded_default)


def clone(cfg: dict) -> dict:
    return json.loads(json.dumps(cfg))


@pytest.fixture
def rng64():
    return np.random.default_rng(64)
