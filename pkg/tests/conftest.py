import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion n")


@pytest.fixture
def report(request):
    """Detail line for the acceptance summary; the test outcome decides PASS/FAIL."""
    marker = request.node.get_closest_marker("acceptance")
    n, title = marker.args
    box = {"detail": ""}
    yield box
    _RESULTS.setdefault(n, (title, "", ""))
    _RESULTS[n] = (title, _RESULTS[n][1], box["detail"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        status = "PASS" if rep.passed else "FAIL"
        prev = _RESULTS.get(n, (title, "", ""))
        _RESULTS[n] = (title, status, prev[2])
        line = f"ACCEPTANCE {n:>2} {status}: {title}"
        print(f"\n{line}")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, status, detail = _RESULTS[n]
        tail = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"[{status or 'FAIL'}] criterion {n}: {title}{tail}")
