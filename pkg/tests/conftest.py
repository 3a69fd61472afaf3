import math
import sys

import numpy as np
import pytest

from dopplervfm.domain import sector_grid, sector_segmentation
from dopplervfm.phantom import StreamFunctionSpec, stream_function_field, synthesize_doppler


@pytest.fixture
def small_grid():
    return sector_grid(20, 50)


@pytest.fixture
def small_seg(small_grid):
    return sector_segmentation(small_grid, 0)


@pytest.fixture
def vortex_frame(small_grid, small_seg):
    truth = stream_function_field(StreamFunctionSpec.single_vortex(), small_grid, small_seg)
    return synthesize_doppler(truth, small_seg, small_grid, snr_db=math.inf)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    rows = getattr(mod, "RESULTS", None)
    if not rows:
        return
    from dopplervfm.acceptance import format_row

    terminalreporter.section("acceptance criteria")
    for row in rows:
        terminalreporter.write_line(format_row(row))
    terminalreporter.write_line(f"{sum(r['pass'] for r in rows)}/{len(rows)} criteria passed")
