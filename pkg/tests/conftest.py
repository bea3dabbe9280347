import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from maskdet.model import SSDMobileNetV2
from maskdet.weights import init_random, save_weights

FIXTURES = Path(__file__).parent / "fixtures"

# outputs must not depend on the worker count; tests default to one worker
os.environ.setdefault("MASKDET_THREADS", "1")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def seed7_store():
    return init_random(7)


@pytest.fixture(scope="session")
def seed7_model(seed7_store):
    return SSDMobileNetV2(seed7_store)


@pytest.fixture(scope="session")
def seed7_weights_path(tmp_path_factory, seed7_store) -> Path:
    path = tmp_path_factory.mktemp("weights") / "seed7.ssdw"
    save_weights(seed7_store, path)
    return path


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


class CriterionLog:
    """Collects one PASS/FAIL/SKIP line per acceptance criterion."""

    def __init__(self):
        self.lines = []

    @contextmanager
    def check(self, label: str, text: str):
        try:
            yield
        except pytest.skip.Exception as exc:
            self.lines.append(f"SKIP  {label}: {text} ({exc.msg})")
            raise
        except BaseException:
            self.lines.append(f"FAIL  {label}: {text}")
            raise
        self.lines.append(f"PASS  {label}: {text}")


_CRITERIA = CriterionLog()


@pytest.fixture(scope="session")
def criterion() -> CriterionLog:
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA.lines:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA.lines:
            terminalreporter.write_line(line)
