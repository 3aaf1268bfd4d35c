import json

import pytest

from core.config import load_config
from core.utils import get_resource_path

TINY_CONFIG = get_resource_path("resources", "configs", "tiny.json")


def write_tiny_config(directory, **changes):
    """Copy the tiny run config into ``directory`` with its output redirected there."""
    data = json.loads(TINY_CONFIG.read_text(encoding="utf-8"))
    data["paths"] = {"out": str(directory / "run")}
    data.update(changes)
    path = directory / "tiny.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


@pytest.fixture
def tiny_config_path(tmp_path):
    return write_tiny_config(tmp_path)


@pytest.fixture
def tiny_config(tiny_config_path):
    return load_config(tiny_config_path)


@pytest.fixture(scope="session")
def prepared_config(tmp_path_factory):
    """A tiny run whose corpora, features and graphs are already on disk."""
    from core.commands import cmd_prepare

    config = load_config(write_tiny_config(tmp_path_factory.mktemp("prepared")))
    cmd_prepare(config)
    return config
