import sys
from pathlib import Path

import pytest

from albatross.server import ServerConfig, serve_in_thread, stop

_CRITERIA: dict[int, tuple[str, bool]] = {}
_NOTES: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        prev = _CRITERIA.get(number, (title, True))[1]
        _CRITERIA[number] = (title, prev and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        detail = "; ".join(_NOTES.get(number, []))
        terminalreporter.write_line(
            f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
        )


@pytest.fixture
def note(request):
    """Attach a measured value to the summary line of this test's criterion."""
    marker = request.node.get_closest_marker("criterion")
    number = marker.args[0] if marker else 0
    return lambda text: _NOTES.setdefault(number, []).append(text)


class FakeClock:
    def __init__(self, now: float = 1000.0):
        self.now = now

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float):
        self.now += seconds


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def relay(tmp_path, clock):
    """In-thread relay with a controllable presence clock."""
    server = serve_in_thread(
        ServerConfig(listen="127.0.0.1:0", t_offline=30, kdf_iterations=1,
                     transcript=str(tmp_path / "transcript.jsonl")),
        clock,
    )
    yield server
    stop(server)


@pytest.fixture
def python():
    return sys.executable


@pytest.fixture
def src_env(monkeypatch):
    # Child processes must import the package from this checkout.
    root = Path(__file__).resolve().parents[1] / "src"
    return {"PYTHONPATH": str(root)}
