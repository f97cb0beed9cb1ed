import pytest

from sandstm import STM, DeterministicScheduler, FirstChooser
from sandstm.sched import Chooser

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


class LastChooser(Chooser):
    """Prefer the latest-spawned candidate: lets a waiting task cut in as soon as it can."""

    def choose(self, sched, candidates):
        return candidates[-1]


@pytest.fixture
def sched():
    return DeterministicScheduler(FirstChooser())


@pytest.fixture
def make_stm():
    made = []

    def make(size=8, **kw):
        stm = STM(size, **kw)
        made.append(stm)
        return stm
    yield make
    for stm in made:
        stm.close()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
