"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

ACCEPTANCE: dict = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
