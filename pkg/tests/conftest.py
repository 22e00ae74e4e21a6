import math

import pytest

from dcvoc.network import GridEvent, GridModel

ACCEPTANCE: dict = {}

CASE1 = dict(Rg=0.05, Lg=0.65)
CASE2 = dict(Rg=0.2, Lg=0.25)


def case_grid(case: int, sag: float | None = None) -> GridModel:
    line = CASE1 if case == 1 else CASE2
    events = (GridEvent(1.0, 2.0, sag),) if sag is not None else ()
    return GridModel(1.0, events=events, **line)


@pytest.fixture
def accept():
    """Record one acceptance line, then assert on it."""
    def record(key: str, ok: bool, detail: str):
        line = f"{key} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE[key] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE[key])


def close(a, b, tol):
    return all(math.isclose(x, y, rel_tol=0, abs_tol=tol) for x, y in zip(a, b))
