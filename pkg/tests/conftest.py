import pytest

ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    ran = set()
    for key, reps in terminalreporter.stats.items():
        if key == "deselected":
            continue
        for r in reps:
            name = getattr(r, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in name:
                ran.add(int(name.split("test_criterion_")[1][:2]))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 13):
        if n in ran:
            terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n:2d}: FAIL  did not complete"))
        else:
            terminalreporter.write_line(f"criterion {n:2d}: not run")
