import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, name, detail = results[k]
        terminalreporter.write_line(f"criterion {k} {'PASS' if ok else 'FAIL'}: {name} ({detail})")
