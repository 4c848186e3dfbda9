import contextlib

import pytest
from hypothesis import HealthCheck, settings

from dxcoverage.ehr import Encounter, SymptomUniverse, Timeline, VisitClass

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Context manager recording the outcome of one acceptance criterion.

    It yields a list; strings appended to it are shown next to a PASS.
    """

    @contextlib.contextmanager
    def record(number: int, title: str):
        notes: list[str] = []
        try:
            yield notes
        except BaseException as exc:
            first = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            ACCEPTANCE[number] = (title, False, first)
            raise
        ACCEPTANCE[number] = (title, True, "; ".join(notes))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


def enc(eid, time, codes=(), note="", visit=VisitClass.OUTPATIENT):
    return Encounter(str(eid), time, visit, frozenset(codes), note)


def timeline(pid, *encounters, age=None):
    return Timeline(pid, tuple(encounters), age)


@pytest.fixture
def small_universe():
    return SymptomUniverse(("fever", "cough", "rash", "chest_pain", "pain"),
                           {"pyrexia": "fever", "tussis": "cough"})
