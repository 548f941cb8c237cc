import pytest


@pytest.fixture(autouse=True, scope="session")
def _dns_cache(tmp_path_factory):
    # keep oracle tables out of the user's cache; shared across the session
    mp = pytest.MonkeyPatch()
    mp.setenv("MSINT_CACHE_DIR", str(tmp_path_factory.mktemp("dns_cache")))
    yield
    mp.undo()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
