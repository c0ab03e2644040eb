import contextlib

import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(capsys):
    """Context manager recording one acceptance line: PASS if the block completes."""

    @contextlib.contextmanager
    def run(number: int, title: str):
        detail = {}
        try:
            yield detail
        except BaseException as exc:
            msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            line = f"criterion {number:2d} FAIL  {title}: {msg[:160]}"
            _ACCEPTANCE[number] = line
            with capsys.disabled():
                print("\n" + line)
            raise
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"criterion {number:2d} PASS  {title}" + (f" ({extra})" if extra else "")
        _ACCEPTANCE[number] = line
        with capsys.disabled():
            print("\n" + line)

    return run


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
