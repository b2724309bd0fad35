import numpy as np
import pytest

from fggb.embedder import conv_spec, init_model

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS.append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_conv():
    """3 conv layers, 16x16x1 input, 8 channels."""
    return init_model(conv_spec((16, 16, 1), 8, channels=(4, 8, 8)), seed=7)


@pytest.fixture(scope="session")
def tiny_conv():
    return init_model(conv_spec((8, 8, 2), 4, channels=(2, 3, 3)), seed=3)
