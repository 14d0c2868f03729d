import re

ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    """Store and print the one-line verdict for an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_runtest_logreport(report):
    # a criterion test that errors before reaching its verdict still gets a line
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if m and report.when == "call" and report.failed and int(m.group(1)) not in ACCEPTANCE:
        msg = str(report.longrepr).strip().splitlines()[-1] if report.longrepr else "error"
        record_criterion(int(m.group(1)), False, f"error before verdict: {msg}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
