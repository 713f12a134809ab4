import time

import numpy as np
import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Criterion:
    """Context manager recording one acceptance criterion as PASS or FAIL."""

    def __init__(self, table: dict, number: int, title: str):
        self.table, self.number, self.title = table, number, title
        self.notes = []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, kind, err, tb):
        status = "PASS" if kind is None else "FAIL"
        detail = "; ".join(self.notes)
        if err is not None:
            detail = (detail + "; " if detail else "") + (str(err).splitlines() or [kind.__name__])[0]
        line = f"criterion {self.number} {status}  {self.title} ({time.perf_counter() - self.t0:.1f}s)"
        line += f"  {detail}" if detail else ""
        self.table[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion(request):
    table = request.config.stash.setdefault(_ACCEPTANCE, {})
    return lambda number, title: Criterion(table, number, title)


def pytest_terminal_summary(terminalreporter, config):
    table = config.stash.get(_ACCEPTANCE, {})
    if table:
        terminalreporter.section("acceptance criteria")
        for number in sorted(table):
            terminalreporter.write_line(table[number])
