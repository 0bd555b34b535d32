import time

import pytest

_LINES = {}


class Criterion:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.checks = []
        self.start = time.perf_counter()

    def check(self, ok: bool, detail: str):
        self.checks.append((bool(ok), detail))

    def within(self, limit_s: float):
        elapsed = time.perf_counter() - self.start
        self.check(elapsed < limit_s, f"runtime {elapsed:.1f} s < {limit_s:g} s")

    @property
    def ok(self):
        return bool(self.checks) and all(ok for ok, _ in self.checks)

    def line(self):
        failed = [d for ok, d in self.checks if not ok]
        shown = failed or [d for _, d in self.checks]
        return f"{'PASS' if self.ok else 'FAIL'} [{self.number}] {self.title}: " + "; ".join(shown)


@pytest.fixture
def criterion(request):
    made = []

    def make(number, title):
        c = Criterion(number, title)
        made.append(c)
        return c

    yield make
    rep = getattr(request.node, "rep_call", None)
    for c in made:
        if not c.checks:
            c.check(False, "did not complete")
        elif c.ok and rep is not None and rep.failed:
            c.check(False, "raised before finishing")
        _LINES[c.number] = c.line()
        print(_LINES[c.number])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
