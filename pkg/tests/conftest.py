import pytest

from vol32 import MarketEnv, load_bundled_params


@pytest.fixture(scope="session")
def drimus():
    return load_bundled_params("drimus32.txt")[0]


@pytest.fixture(scope="session")
def fig4():
    p, jp, _ = load_bundled_params("fig4.txt")
    return p, jp


@pytest.fixture(scope="session")
def fig3():
    return load_bundled_params("fig3.txt")[0]


@pytest.fixture(scope="session")
def heston():
    return load_bundled_params("heston_drimus.txt", model="svj")[0]


@pytest.fixture
def env():
    return MarketEnv(r=0.0, s0=100.0)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and repeat it in the terminal summary."""

    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n    {line}")

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
