import numpy as np
import pytest

from mcn.geometry import RotatedBox
from mcn.grid import GridShape


def node_box(r0, r1, c0, c1, stride=16):
    """Axis-aligned box covering node rows r0..r1 and columns c0..c1 exactly."""
    return RotatedBox(
        cx=(c0 + c1 + 1) * stride / 2,
        cy=(r0 + r1 + 1) * stride / 2,
        w=(c1 - c0 + 1) * stride,
        h=(r1 - r0 + 1) * stride,
        theta=0.0,
    )


@pytest.fixture
def two_rect_scene():
    """8x8 grid with two 2x3-node rectangles."""
    shape = GridShape(8, 8)
    boxes = [node_box(1, 2, 1, 3), node_box(5, 6, 4, 6)]
    return shape, boxes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each; collected here and echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
