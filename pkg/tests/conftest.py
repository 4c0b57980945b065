import numpy as np
import pytest

from spnlens.raster import CaptureMeta, RasterImage

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_image(pixels, layout="RGGB", **meta):
    return RasterImage(np.asarray(pixels, dtype=np.float64), bit_depth=10, cfa_layout=layout, meta=CaptureMeta(**meta))
