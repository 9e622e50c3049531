import numpy as np
import pytest

from lodfvm import kernels

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture(params=kernels.available())
def backend(request):
    """Every sweep-kernel backend built in this environment."""
    return kernels.get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.section(f"acceptance criteria (kernels={kernels.BACKEND})")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def acceptance():
    """Record one acceptance line; returns ``ok`` so the test can assert on it."""

    def record(name: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return bool(ok)

    return record
