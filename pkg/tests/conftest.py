import contextlib

CRITERIA: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record one acceptance line; the block passes if it finishes."""
    note = []
    try:
        yield note
    except BaseException:
        CRITERIA[number] = f"criterion {number:2d} FAIL  {title}" + (f"  [{'; '.join(note)}]" if note else "")
        print(CRITERIA[number])
        raise
    CRITERIA[number] = f"criterion {number:2d} PASS  {title}" + (f"  [{'; '.join(note)}]" if note else "")
    print(CRITERIA[number])


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
