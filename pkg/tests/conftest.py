import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tacsim.config_io import load_bundled_config


@pytest.fixture(scope="session")
def digit_cfg():
    return load_bundled_config("digit")


@pytest.fixture(scope="session")
def gelsight_cfg():
    return load_bundled_config("gelsight")
