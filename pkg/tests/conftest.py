"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

import pytest

CRITERIA = {
    1: "feature oracle equivalence",
    2: "regressor quality",
    3: "compensation convergence",
    4: "AdaBoost soundness",
    5: "end-to-end ordering on bench-hard",
    6: "AveP correctness",
    7: "collision-course analogue",
    8: "determinism",
}
_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        _results[number] = (bool(passed), detail)
        print(_line(number))
    return record


def _line(number: int) -> str:
    if number not in _results:
        return f"criterion {number} ({CRITERIA[number]}): FAIL no result recorded"
    passed, detail = _results[number]
    return f"criterion {number} ({CRITERIA[number]}): {'PASS' if passed else 'FAIL'} {detail}"


def pytest_terminal_summary(terminalreporter):
    ran = any(item.nodeid.startswith("tests/test_acceptance.py")
              for item in getattr(terminalreporter, "_session_items", []) or []) or _results
    if not ran:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in CRITERIA:
        terminalreporter.write_line(_line(number))


def pytest_collection_finish(session):
    session.config.pluginmanager.get_plugin("terminalreporter")._session_items = session.items
