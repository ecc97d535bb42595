import json

import pytest

from common.config import parse_config
from common.model import EvolutionModel
from engine.expansion import build_expansion
from tests.documents import ASYMMETRIC, telegraph_document


@pytest.fixture(scope="session")
def telegraph_config():
    return parse_config(telegraph_document())


@pytest.fixture(scope="session")
def telegraph_model(telegraph_config):
    return EvolutionModel.from_config(telegraph_config)


@pytest.fixture(scope="session")
def telegraph_expansion(telegraph_model):
    return build_expansion(telegraph_model, order=3)


@pytest.fixture(scope="session")
def asymmetric_model():
    return EvolutionModel.from_config(parse_config(telegraph_document(ASYMMETRIC)))


@pytest.fixture(scope="session")
def asymmetric_expansion(asymmetric_model):
    return build_expansion(asymmetric_model, order=3)


@pytest.fixture(scope="session")
def sweep_model():
    """Telegraph model on a finer grid for remainder measurements."""
    return EvolutionModel.from_config(parse_config(telegraph_document(grid={"n_points": 512})))


@pytest.fixture(scope="session")
def sweep_expansion(sweep_model):
    return build_expansion(sweep_model, order=3)


@pytest.fixture
def config_file(tmp_path):
    """Write a config document to a temporary JSON file and return its path."""
    def write(document, name="model.json"):
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return str(path)
    return write
