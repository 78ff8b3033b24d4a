from tests.acceptance_log import RESULTS


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(RESULTS):
        terminalreporter.write_line(f"{number:2d} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
