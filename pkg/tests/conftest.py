import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qgvt.archive import gen_synthetic  # noqa: E402
from qgvt.config import EncoderConfig, get_preset  # noqa: E402


@pytest.fixture(scope="session")
def toy_config() -> EncoderConfig:
    return get_preset("toy")


@pytest.fixture(scope="session")
def toy_weights(toy_config):
    return gen_synthetic(7, toy_config, preset="toy")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, size):
    return rng.integers(0, 256, (size, size, 3), dtype=np.uint8)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
