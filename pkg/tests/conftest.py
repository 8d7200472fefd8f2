import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from boundprobe.fixtures import build_fixture, fixture_record  # noqa: E402


@pytest.fixture(scope="session")
def fixture_model():
    return build_fixture()


@pytest.fixture
def record():
    return fixture_record()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
