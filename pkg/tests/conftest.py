import sys

# criterion number -> (passed, detail), filled by test_acceptance
VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs the full pipeline or other multi-minute work")


def record(n, passed, detail):
    VERDICTS[n] = (bool(passed), detail)
    print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}", file=sys.stderr)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        passed, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
