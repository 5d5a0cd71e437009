import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parent.parent
_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture(scope="session")
def ml100k_path():
    """MovieLens-100K ``u.data``; set MFREC_ML100K to point elsewhere."""
    path = Path(os.environ.get("MFREC_ML100K", ROOT / "data" / "ml-100k" / "u.data"))
    if not path.is_file():
        pytest.skip(f"MovieLens-100K not found at {path} (set MFREC_ML100K)")
    return path


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        measured = dict(item.user_properties).get("measured", "")
        _RESULTS[number] = (status, title, measured)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        status, title, measured = _RESULTS[number]
        line = f"criterion {number:2d}: {status}  {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
