from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_factory import make_geo_env  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def geo_env(tmp_path_factory):
    """(schema_path, db_path) for the deterministic geography database."""
    root = tmp_path_factory.mktemp("geo")
    return make_geo_env(root)


@pytest.fixture(scope="session")
def geo_schema(geo_env):
    from sqlrobust.corpus import load_schema

    schema_path, _ = geo_env
    return load_schema(schema_path, rows_limit=3)


@pytest.fixture(scope="session")
def geo_db(geo_env):
    _, db_path = geo_env
    return str(db_path)


@pytest.fixture(scope="session")
def synth_dataset():
    from sqlrobust.corpus import load_dataset

    return load_dataset(FIXTURES / "geo_synth.jsonl")


@pytest.fixture(scope="session")
def toy_dataset():
    from sqlrobust.corpus import load_dataset

    return load_dataset(FIXTURES / "toy_dataset.jsonl")
