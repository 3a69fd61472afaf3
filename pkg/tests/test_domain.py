import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dopplervfm.domain import (
    PolarGrid,
    Segmentation,
    boundary_mask,
    build_grid,
    extract_boundary,
    sector_grid,
    sector_segmentation,
)
from dopplervfm.phantom import VelocityField


def test_paper_scale_grid_has_16000_points():
    g = build_grid(200, 80, 0.02, 0.0005, -0.6, 0.015)
    assert g.size == 16000
    assert g.shape == (200, 80)


def test_first_position_is_lattice_origin():
    g = build_grid(4, 4, 1.0, 1.0, 0.0, 0.1)
    assert g.position(0, 0) == (1.0, 0.0)
    assert g.position(3, 2) == (4.0, 0.2)


@pytest.mark.parametrize(
    "args",
    [
        (4, 4, 0.0, 1.0, 0.0, 0.1),
        (4, 4, -1.0, 1.0, 0.0, 0.1),
        (4, 4, 1.0, 0.0, 0.0, 0.1),
        (4, 4, 1.0, 1.0, 0.0, -0.1),
        (3, 4, 1.0, 1.0, 0.0, 0.1),
    ],
)
def test_invalid_grids_rejected(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_sector_grid_spans_defaults():
    g = sector_grid(40, 100)
    assert g.r[0] == pytest.approx(0.02)
    assert g.r[-1] == pytest.approx(0.12)
    assert g.theta[-1] - g.theta[0] == pytest.approx(np.deg2rad(68))
    assert g.theta[0] == pytest.approx(-g.theta[-1])


def test_grid_dict_round_trip():
    g = sector_grid(7, 9)
    assert PolarGrid.from_dict(g.to_dict()) == g


def test_sector_segmentation_counts():
    g = build_grid(10, 10, 1.0, 1.0, 0.0, 0.1)
    assert sector_segmentation(g, 0).mask.sum() == 100
    assert sector_segmentation(g, 2).mask.sum() == 36
    with pytest.raises(ValueError):
        sector_segmentation(build_grid(4, 4, 1.0, 1.0, 0.0, 0.1), 2)


def test_empty_segmentation_rejected():
    with pytest.raises(ValueError):
        Segmentation(np.zeros((4, 4), bool))


def test_mask_must_match_grid():
    g = build_grid(5, 5, 1.0, 1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        Segmentation(np.ones((4, 5), bool)).check_grid(g)


def test_full_mask_boundary_is_outer_ring():
    g = build_grid(10, 10, 1.0, 1.0, 0.0, 0.1)
    bc = extract_boundary(sector_segmentation(g, 0), g)
    assert len(bc) == 36


def test_rectangular_edge_normals_are_axis_aligned():
    g = build_grid(10, 12, 1.0, 1.0, 0.0, 0.1)
    seg = sector_segmentation(g, 2)
    bc = extract_boundary(seg, g)
    lookup = {tuple(ix): n for ix, n in zip(bc.indices, bc.normals)}
    assert np.array_equal(lookup[(2, 5)], [-1.0, 0.0])
    assert np.array_equal(lookup[(7, 5)], [1.0, 0.0])
    assert np.array_equal(lookup[(4, 2)], [0.0, -1.0])
    assert np.array_equal(lookup[(4, 9)], [0.0, 1.0])
    corner = lookup[(2, 2)]
    assert np.allclose(corner, [-np.sqrt(0.5), -np.sqrt(0.5)])
    # boundary cells are exactly the edge ring of the mask
    ring = seg.mask.copy()
    ring[3:7, 3:9] = False
    assert {tuple(i) for i in bc.indices} == {tuple(i) for i in np.argwhere(ring)}


def test_single_cell_mask_uses_radial_tie_break():
    g = build_grid(5, 5, 1.0, 1.0, 0.0, 0.1)
    mask = np.zeros(g.shape, bool)
    mask[2, 2] = True
    bc = extract_boundary(Segmentation(mask), g)
    assert len(bc) == 1
    assert np.array_equal(bc.normals[0], [1.0, 0.0])
    assert bc.samples[0]["grid_index"] == (2, 2)


def test_wall_velocity_sampled_at_boundary_cells():
    g = build_grid(6, 6, 1.0, 1.0, 0.0, 0.1)
    seg = sector_segmentation(g, 0)
    R, T = g.mesh()
    wall = VelocityField(R.copy(), T.copy())
    bc = extract_boundary(seg, g, wall)
    i, j = bc.indices[:, 0], bc.indices[:, 1]
    assert np.array_equal(bc.wall_velocity[:, 0], R[i, j])
    assert np.array_equal(bc.wall_velocity[:, 1], T[i, j])
    assert np.array_equal(bc.positions[:, 0], g.r[i])


@settings(max_examples=60, deadline=None)
@given(arrays(bool, (7, 8)))
def test_random_masks_give_unit_normals_on_edge_cells(mask):
    if not mask.any():
        return
    g = build_grid(7, 8, 0.5, 0.1, -0.3, 0.05)
    seg = Segmentation(mask)
    bc = extract_boundary(seg, g)
    assert np.allclose(np.linalg.norm(bc.normals, axis=1), 1.0, atol=1e-12)
    edge = boundary_mask(mask)
    assert {tuple(i) for i in bc.indices} == {tuple(i) for i in np.argwhere(edge)}
    again = extract_boundary(seg, g)
    assert np.array_equal(again.indices, bc.indices) and np.array_equal(again.normals, bc.normals)
