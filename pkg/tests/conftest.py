from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blobguard.blobstore import TEST_LIMITS, BlobStore  # noqa: E402
from blobguard.rbac import PolicyStore  # noqa: E402
from helpers import Harness, ManualClock  # noqa: E402


@pytest.fixture
def clock() -> ManualClock:
    return ManualClock(1_000_000.0)


@pytest.fixture
def policy(clock) -> PolicyStore:
    return PolicyStore(clock=clock, hash_iterations=1)


@pytest.fixture
def store(tmp_path) -> BlobStore:
    s = BlobStore(tmp_path / "blobs", TEST_LIMITS, fsync=False)
    s.create_account("acme", 256 * 2**20)
    s.create_container("acme", "photos")
    return s


@pytest.fixture
def harness(tmp_path):
    h = Harness(tmp_path)
    yield h
    h.close()


_CRITERIA: dict = {}


class CriterionReport:
    def __init__(self, number: int) -> None:
        self.number = number
        self.done = False

    def __call__(self, ok: bool, detail: str) -> None:
        self.done = True
        line = f"criterion {self.number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _CRITERIA[self.number] = line
        print(line)
        assert ok, line


@pytest.fixture
def criterion(request):
    """``criterion(n)`` returns a reporter; a test that dies before reporting is recorded as FAIL."""
    made = []

    def make(number: int) -> CriterionReport:
        made.append(CriterionReport(number))
        return made[-1]

    yield make
    for rep in made:
        if not rep.done:
            _CRITERIA[rep.number] = f"criterion {rep.number}: FAIL - did not complete"


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
