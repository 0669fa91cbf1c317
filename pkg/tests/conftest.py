import json
import os

import pytest
from hypothesis import HealthCheck, settings

from sipcompose.cli import example_path
from sipcompose.composer import CompositionConfig, load_config
from sipcompose.passes import propose_all
from sipcompose.program import load_program

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def mileage():
    return load_program(example_path("mileage.json"))


@pytest.fixture(scope="session")
def mileage_config() -> CompositionConfig:
    return load_config(example_path("mileage_config.json"))


@pytest.fixture(scope="session")
def mileage_manifests(mileage, mileage_config):
    return propose_all(mileage, mileage_config.pass_config())


@pytest.fixture(scope="session")
def mileage_result(mileage, mileage_config):
    from sipcompose.composer import compose

    return compose(mileage, mileage_config)


@pytest.fixture
def write_json(tmp_path):
    def _write(name, data):
        p = tmp_path / name
        p.write_text(json.dumps(data))
        return str(p)

    return _write
