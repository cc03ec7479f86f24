import pytest

from deftsim import build_tables, preset


@pytest.fixture(scope="session")
def base():
    return preset("baseline4")


@pytest.fixture(scope="session")
def tables(base):
    return build_tables(base)


@pytest.fixture(scope="session")
def dist_tables(base):
    return build_tables(base, strategy="distance")


@pytest.fixture(scope="session")
def six():
    return preset("six6")


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; shown in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
