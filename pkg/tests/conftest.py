def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
    missing = [n for n in range(1, 13) if n not in verdicts]
    for n in missing:
        terminalreporter.write_line(f"criterion {n:2d}: FAIL  (did not report)")
