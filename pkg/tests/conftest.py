import contextlib
import time

import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion.

    Usage: ``with criterion(3, "title") as note: ...; note("detail")``.
    """

    @contextlib.contextmanager
    def run(number: int, title: str):
        details: list[str] = []
        start = time.perf_counter()
        try:
            yield details.append
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            details.append(msg)
            _LINES.append(_format("FAIL", number, title, details, start))
            raise
        _LINES.append(_format("PASS", number, title, details, start))

    return run


def _format(status, number, title, details, start):
    took = time.perf_counter() - start
    extra = "; ".join(details)
    return f"[{status}] criterion {number:>2}: {title} ({took:.1f}s){' - ' + extra if extra else ''}"


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
