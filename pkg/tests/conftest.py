import pytest

_RESULTS = {}


@pytest.fixture
def criterion(request):
    """Recorder for one acceptance criterion: ``criterion(cid, title)(ok, detail)``."""

    def start(cid, title):
        def record(ok, detail=""):
            _RESULTS[cid] = (title, bool(ok), detail)
            print(f"[{'PASS' if ok else 'FAIL'}] C{cid} {title}: {detail}")
            return ok

        _RESULTS.setdefault(cid, (title, False, "did not complete"))
        return record

    return start


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_RESULTS):
        title, ok, detail = _RESULTS[cid]
        terminalreporter.write_line(f"C{cid:<2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
