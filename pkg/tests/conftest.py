import shutil
import sys
from pathlib import Path

import pytest

UNIVERSE = Path(__file__).parent / "fixtures" / "universe"


@pytest.fixture
def universe(tmp_path) -> Path:
    """A private copy of the bundled fixture universe."""
    dest = tmp_path / "universe"
    shutil.copytree(UNIVERSE, dest)
    return dest


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
