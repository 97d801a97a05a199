import numpy as np
import pytest

from rfmlab.imaging import Image

# Collected pass/fail lines from the acceptance module, echoed at session end.
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: int, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {criterion}: {status}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    assert passed, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng: np.random.Generator, channels: int = 3, height: int = 8,
                 width: int = 8) -> Image:
    return Image(rng.integers(0, 256, size=(channels, height, width), dtype=np.uint8))
