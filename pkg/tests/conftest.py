import pytest

N_CRITERIA = 12


@pytest.fixture
def report(request):
    """report(n, ok, detail): record and print one acceptance line."""
    store = request.config.__dict__.setdefault("_acceptance", {})

    def _report(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        store[n] = line
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = getattr(config, "_acceptance", None)
    if store is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(store.get(n, f"FAIL criterion {n}: not run or errored before reporting"))
