import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

FIXTURES = HERE / "fixtures"
NETS = FIXTURES / "nets"
VNNLIB = FIXTURES / "vnnlib"


@pytest.fixture
def nets_dir():
    return NETS


@pytest.fixture
def vnnlib_dir():
    return VNNLIB


@pytest.fixture(autouse=True)
def _scratch_workdir(tmp_path, monkeypatch):
    # keep runner scratch directories inside the per-test tmp dir
    monkeypatch.setenv("VNN_ARENA_WORKDIR", str(tmp_path / "work"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
