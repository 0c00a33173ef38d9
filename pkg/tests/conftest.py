import numpy as np
import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the test still asserts on its own."""
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        request.config.stash.setdefault(_RESULTS, []).append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)
