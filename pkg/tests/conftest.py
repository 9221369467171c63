"""
Shared pytest setup: project root on sys.path, the ``slow`` marker and the
``--runslow`` switch for the training experiments.
"""
import sys
from pathlib import Path

import pytest

project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run the Adam training experiments"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: learned-path experiment (minutes of CPU)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
