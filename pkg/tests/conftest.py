import pytest

_ACCEPTANCE = {}


class AcceptanceLog:
    """Collects one verdict line per acceptance criterion."""

    def record(self, number: int, name: str, passed: bool, detail: str = "", soft: bool = False):
        tag = "PASS" if passed else ("WARN" if soft else "FAIL")
        _ACCEPTANCE[(number, name)] = f"[{tag}] criterion {number:>2} {name}: {detail}"


@pytest.fixture(scope="session")
def acceptance_log():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[key])
