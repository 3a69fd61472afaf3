"""Polar sampling lattice, cavity masks and boundary extraction.

Arrays on the lattice are indexed ``[i_r, i_theta]``: axis 0 walks along a
scanline (radius), axis 1 walks across scanlines (angle).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_R_MIN = 0.02
DEFAULT_R_MAX = 0.12
DEFAULT_APERTURE = np.deg2rad(68.0)


@dataclass(frozen=True)
class PolarGrid:
    """Regular (r, theta) lattice of an imaging sector.

    Sample ``(i, j)`` sits at ``r0 + i*dr`` and ``theta0 + j*dtheta``.
    """

    n_r: int
    n_theta: int
    r0: float
    dr: float
    theta0: float
    dtheta: float

    def __post_init__(self):
        if self.n_r < 4 or self.n_theta < 4:
            raise ValueError(f"grid needs at least 4x4 samples, got {self.n_r}x{self.n_theta}")
        if not self.r0 > 0:
            raise ValueError(f"r0 must be > 0 (divergence is singular at r=0), got {self.r0}")
        if not (self.dr > 0 and self.dtheta > 0):
            raise ValueError(f"spacings must be positive, got dr={self.dr}, dtheta={self.dtheta}")
        for name in ("r0", "dr", "theta0", "dtheta"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r, self.n_theta)

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @property
    def r(self) -> np.ndarray:
        return self.r0 + self.dr * np.arange(self.n_r)

    @property
    def theta(self) -> np.ndarray:
        return self.theta0 + self.dtheta * np.arange(self.n_theta)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(R, Theta)`` lattices of shape ``(n_r, n_theta)``."""
        return np.meshgrid(self.r, self.theta, indexing="ij")

    def position(self, i: int, j: int) -> tuple[float, float]:
        return (self.r0 + i * self.dr, self.theta0 + j * self.dtheta)

    def to_dict(self) -> dict:
        return {
            "n_r": self.n_r,
            "n_theta": self.n_theta,
            "r0": self.r0,
            "dr": self.dr,
            "theta0": self.theta0,
            "dtheta": self.dtheta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolarGrid":
        return cls(
            n_r=int(d["n_r"]),
            n_theta=int(d["n_theta"]),
            r0=float(d["r0"]),
            dr=float(d["dr"]),
            theta0=float(d["theta0"]),
            dtheta=float(d["dtheta"]),
        )


def build_grid(n_r, n_theta, r0, dr, theta0, dtheta) -> PolarGrid:
    return PolarGrid(int(n_r), int(n_theta), float(r0), float(dr), float(theta0), float(dtheta))


def sector_grid(n_r, n_theta, r_min=DEFAULT_R_MIN, r_max=DEFAULT_R_MAX, aperture=DEFAULT_APERTURE):
    """Grid spanning ``[r_min, r_max]`` and a sector centred on the probe axis."""
    return build_grid(
        n_r,
        n_theta,
        r_min,
        (r_max - r_min) / (n_r - 1),
        -aperture / 2,
        aperture / (n_theta - 1),
    )


@dataclass(frozen=True)
class Segmentation:
    """Boolean cavity mask, ``True`` inside the cavity."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("segmentation mask must be 2-D")
        if not mask.any():
            raise ValueError("segmentation mask is empty")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.mask.shape

    def check_grid(self, grid: PolarGrid):
        if self.mask.shape != grid.shape:
            raise ValueError(f"mask shape {self.mask.shape} does not match grid {grid.shape}")

    def bounding_box(self) -> tuple[int, int, int, int]:
        """Inclusive index bounds ``(i_min, i_max, j_min, j_max)`` of the cavity."""
        ii = np.flatnonzero(self.mask.any(axis=1))
        jj = np.flatnonzero(self.mask.any(axis=0))
        return int(ii[0]), int(ii[-1]), int(jj[0]), int(jj[-1])


def sector_segmentation(grid: PolarGrid, margin: int = 0) -> Segmentation:
    """Full sector minus a ring of ``margin`` cells."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if 2 * margin >= min(grid.n_r, grid.n_theta):
        raise ValueError(f"margin {margin} leaves an empty cavity on a {grid.shape} grid")
    mask = np.zeros(grid.shape, dtype=bool)
    mask[margin : grid.n_r - margin, margin : grid.n_theta - margin] = True
    return Segmentation(mask)


# (di, dj) offsets of the 4-neighbourhood; +i is +r_hat, +j is +theta_hat
_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class BoundaryConditionSet:
    """Wall samples: lattice indices, positions, outward unit normals and wall velocities.

    All arrays have shape ``(n_samples, 2)``; vector columns are ``(r, theta)``
    components in the local physical basis.
    """

    indices: np.ndarray
    positions: np.ndarray
    normals: np.ndarray
    wall_velocity: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.indices)

    @property
    def samples(self) -> list[dict]:
        return [
            {
                "grid_index": tuple(int(v) for v in self.indices[k]),
                "position": tuple(self.positions[k]),
                "normal": tuple(self.normals[k]),
                "wall_velocity": tuple(self.wall_velocity[k]),
            }
            for k in range(len(self))
        ]


def outside_neighbours(mask: np.ndarray) -> np.ndarray:
    """Per-cell count of 4-neighbours outside the mask (off-grid counts as outside)."""
    padded = np.pad(mask, 1, constant_values=False)
    count = np.zeros(mask.shape, dtype=int)
    n_r, n_t = mask.shape
    for di, dj in _NEIGHBOURS:
        count += ~padded[1 + di : 1 + di + n_r, 1 + dj : 1 + dj + n_t]
    return count


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Inside cells with at least one outside 4-neighbour."""
    mask = np.asarray(mask, dtype=bool)
    return mask & (outside_neighbours(mask) > 0)


def extract_boundary(seg: Segmentation, grid: PolarGrid, wall_velocity=None) -> BoundaryConditionSet:
    """Boundary samples of ``seg`` with mask-derived outward normals.

    The normal of a cell is the normalised sum of unit vectors pointing to its
    outside 4-neighbours. When that sum vanishes (isolated cell, or a one-cell
    wide strip) the normal falls back to ``+r_hat``.
    """
    seg.check_grid(grid)
    mask = seg.mask
    padded = np.pad(mask, 1, constant_values=False)
    n_r, n_t = mask.shape
    direction = np.zeros((n_r, n_t, 2))
    for di, dj in _NEIGHBOURS:
        outside = ~padded[1 + di : 1 + di + n_r, 1 + dj : 1 + dj + n_t]
        direction[..., 0] += di * outside
        direction[..., 1] += dj * outside

    edge = boundary_mask(mask)
    idx = np.argwhere(edge)
    normals = direction[idx[:, 0], idx[:, 1]]
    length = np.hypot(normals[:, 0], normals[:, 1])
    degenerate = length == 0
    normals[degenerate] = (1.0, 0.0)
    length[degenerate] = 1.0
    normals = normals / length[:, None]

    r = grid.r[idx[:, 0]]
    theta = grid.theta[idx[:, 1]]
    if wall_velocity is None:
        wv = np.zeros((len(idx), 2))
    else:
        wv = np.column_stack(
            [
                np.asarray(wall_velocity.v_r)[idx[:, 0], idx[:, 1]],
                np.asarray(wall_velocity.v_theta)[idx[:, 0], idx[:, 1]],
            ]
        )
    return BoundaryConditionSet(
        indices=idx,
        positions=np.column_stack([r, theta]),
        normals=normals,
        wall_velocity=wv,
    )
