import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_boxes(rng, n, H, W, min_size=1.0):
    """Valid boxes inside an HxW grid."""
    h = rng.uniform(min_size, max(min_size, H / 2), n)
    w = rng.uniform(min_size, max(min_size, W / 2), n)
    y0 = rng.uniform(0, H - 1 - h)
    x0 = rng.uniform(0, W - 1 - w)
    return np.column_stack([y0, x0, y0 + h, x0 + w])


_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[number] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
