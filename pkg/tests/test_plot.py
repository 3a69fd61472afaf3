import numpy as np
import pytest

from dopplervfm.domain import sector_grid, sector_segmentation
from dopplervfm.phantom import StreamFunctionSpec, VelocityField, stream_function_field
from dopplervfm.plot import quiver_svg, write_quiver


@pytest.fixture
def setup():
    g = sector_grid(80, 200)
    seg = sector_segmentation(g, 0)
    return g, seg, stream_function_field(StreamFunctionSpec.single_vortex(), g, seg)


def test_svg_is_byte_stable(setup, tmp_path):
    g, seg, f = setup
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    write_quiver(a, f, g, seg.mask, title="vortex")
    write_quiver(b, f, g, seg.mask, title="vortex")
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert text.startswith("<svg") or text.startswith("<?xml")
    assert "vortex" in text


def test_decimation_controls_arrow_count(setup):
    g, seg, f = setup
    dense = quiver_svg(f, g, seg.mask, decimate=2)
    sparse = quiver_svg(f, g, seg.mask, decimate=4)
    assert dense.count("<path") > 3 * sparse.count("<path")
    with pytest.raises(ValueError):
        quiver_svg(f, g, seg.mask, decimate=0)


def test_zero_field_draws_dots(setup):
    g, seg, _ = setup
    svg = quiver_svg(VelocityField.zeros(g.shape), g, seg.mask, decimate=8)
    assert "<path" not in svg
    assert svg.count("<circle") == len(range(0, 80, 8)) * len(range(0, 200, 8))


def test_shape_mismatch_rejected(setup):
    g, seg, f = setup
    with pytest.raises(ValueError):
        quiver_svg(VelocityField.zeros((4, 4)), g)
