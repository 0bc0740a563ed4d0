import sys


def pytest_terminal_summary(terminalreporter):
    mod = (sys.modules.get("tests.test_acceptance")
           or sys.modules.get("test_acceptance"))
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for n, ok, detail in sorted(mod.RESULTS):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"  criterion {n:2d}: {status} ({detail})")
