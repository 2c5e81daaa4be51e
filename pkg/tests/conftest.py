import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


class Criterion:
    """Collects one pass/fail line for an acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.line = None

    def record(self, ok: bool, detail: str) -> bool:
        self.line = f"[{'PASS' if ok else 'FAIL'}] {self.number:>2}. {self.title}: {detail}"
        print(self.line)
        return ok


@pytest.fixture
def criterion(request):
    number, title = request.node.get_closest_marker("criterion").args
    c = Criterion(number, title)
    yield c
    _ACCEPTANCE.append(c.line or f"[FAIL] {number:>2}. {title}: raised before reporting")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip("."))):
            terminalreporter.write_line(line)
