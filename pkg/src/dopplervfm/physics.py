"""Residuals and penalties: Huber norm, mass conservation, free-slip wall, smoothness.

Derivatives are taken in physical units (per metre, per radian). Lattice
operators are returned as ``scipy.sparse`` matrices acting on row-major
flattened ``(n_r, n_theta)`` fields so they can be shared by the grid
residual, the network smoothing loss and the least-squares system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .domain import PolarGrid, Segmentation


@dataclass(frozen=True)
class HuberConfig:
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("Huber beta must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    l2: float
    l3: float
    l4: float

    def as_tuple(self):
        return (self.l1, self.l2, self.l3, self.l4)


def huber(x, beta=1.0):
    """Smooth-L1: ``0.5 x**2 / beta`` below ``beta``, ``|x| - 0.5 beta`` above."""
    if isinstance(beta, HuberConfig):
        beta = beta.beta
    if not beta > 0:
        raise ValueError("Huber beta must be positive")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)
    return out if out.ndim else float(out)


def c1_residual(r, v_r, dvr_dr, dvtheta_dtheta):
    """Mass conservation ``r dv_r/dr + v_r + dv_theta/dtheta`` (r times the divergence)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("c1_residual requires r > 0")
    out = r * dvr_dr + v_r + dvtheta_dtheta
    return float(out) if np.ndim(out) == 0 else out


def c2_residual(v, v_w, n_w):
    """Normal component of the velocity relative to the wall, ``(v - v_w) . n_w``.

    Arguments are 2-vectors or ``(n, 2)`` arrays.
    """
    v = np.asarray(v, dtype=float)
    v_w = np.asarray(v_w, dtype=float)
    n_w = np.asarray(n_w, dtype=float)
    norm = np.linalg.norm(n_w, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-9):
        raise ValueError("wall normal must have unit length")
    out = np.sum((v - v_w) * n_w, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _flat(i, j, n_theta):
    return i * n_theta + j


def first_derivative_operators(grid: PolarGrid, avail: np.ndarray):
    """First-derivative matrices over cells of ``avail``.

    For each available cell and each axis the derivative is central when both
    neighbours are available and one-sided (first order) when only one is.
    Cells with no available neighbour along either axis get no row.

    Returns ``(D_r, D_theta, cells, central)`` where ``cells`` holds the
    ``(i, j)`` of each row and ``central`` flags rows central on both axes.
    """
    avail = np.asarray(avail, dtype=bool)
    n_r, n_t = avail.shape
    pad = np.pad(avail, 1, constant_values=False)
    up_r = pad[2:, 1:-1] & avail
    dn_r = pad[:-2, 1:-1] & avail
    up_t = pad[1:-1, 2:] & avail
    dn_t = pad[1:-1, :-2] & avail
    rows = avail & (up_r | dn_r) & (up_t | dn_t)
    cells = np.argwhere(rows)
    i, j = cells[:, 0], cells[:, 1]
    k = np.arange(len(cells))

    def build(plus, minus, di, dj, h):
        p = plus[i, j]
        m = minus[i, j]
        both = p & m
        hi_i = np.where(p, i + di, i)
        hi_j = np.where(p, j + dj, j)
        lo_i = np.where(m, i - di, i)
        lo_j = np.where(m, j - dj, j)
        denom = np.where(both, 2 * h, h)
        data = np.concatenate([1.0 / denom, -1.0 / denom])
        r_idx = np.concatenate([k, k])
        c_idx = np.concatenate([_flat(hi_i, hi_j, n_t), _flat(lo_i, lo_j, n_t)])
        return sp.csr_matrix((data, (r_idx, c_idx)), shape=(len(cells), n_r * n_t)), both

    D_r, cen_r = build(up_r, dn_r, 1, 0, grid.dr)
    D_t, cen_t = build(up_t, dn_t, 0, 1, grid.dtheta)
    return D_r, D_t, cells, cen_r & cen_t


def c1_operator(grid: PolarGrid, avail: np.ndarray, central_only=False):
    """Sparse map from stacked ``[v_r, v_theta]`` lattices to the discrete C1 residual.

    Returns ``(A, cells)``.
    """
    D_r, D_t, cells, central = first_derivative_operators(grid, avail)
    if central_only:
        D_r, D_t, cells = D_r[central], D_t[central], cells[central]
    r = grid.r[cells[:, 0]]
    n = grid.size
    pick = sp.csr_matrix(
        (np.ones(len(cells)), (np.arange(len(cells)), _flat(cells[:, 0], cells[:, 1], grid.n_theta))),
        shape=(len(cells), n),
    )
    A_r = sp.diags(r) @ D_r + pick
    return sp.hstack([A_r, D_t], format="csr"), cells


def smoothing_operator(grid: PolarGrid, seg: Segmentation) -> tuple[sp.csr_matrix, np.ndarray]:
    """Stacked, pre-weighted second-difference operator ``S`` for the smoothness energy.

    For one velocity component ``v`` (flattened lattice), ``||S v||**2`` equals
    the sum over stencil centres of ``(r^2 v_rr)^2 + 2 (r v_rtheta)^2 + v_thetatheta^2``.
    Only cells whose full 3x3 neighbourhood lies inside the cavity are centres.
    Returns ``(S, centres)``.
    """
    seg.check_grid(grid)
    mask = seg.mask
    n_r, n_t = mask.shape
    pad = np.pad(mask, 1, constant_values=False)
    full = np.ones_like(mask)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            full &= pad[1 + di : 1 + di + n_r, 1 + dj : 1 + dj + n_t]
    centres = np.argwhere(full)
    i, j = centres[:, 0], centres[:, 1]
    k = np.arange(len(centres))
    r = grid.r[i]
    dr, dt = grid.dr, grid.dtheta

    def stencil(entries, scale):
        rows, cols, vals = [], [], []
        for di, dj, w in entries:
            rows.append(k)
            cols.append(_flat(i + di, j + dj, n_t))
            vals.append(w * scale)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(centres), n_r * n_t),
        )

    d_rr = stencil([(-1, 0, 1.0), (0, 0, -2.0), (1, 0, 1.0)], r**2 / dr**2)
    d_tt = stencil([(0, -1, 1.0), (0, 0, -2.0), (0, 1, 1.0)], np.full(len(centres), 1.0 / dt**2))
    d_rt = stencil(
        [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)],
        np.sqrt(2.0) * r / (4 * dr * dt),
    )
    return sp.vstack([d_rr, d_rt, d_tt], format="csr"), centres


def smoothing_energy(field, grid: PolarGrid, seg: Segmentation) -> float:
    """Second-derivative smoothness energy of both components (sum reduction)."""
    if field.shape != grid.shape:
        raise ValueError("field does not match grid")
    S, _ = smoothing_operator(grid, seg)
    total = 0.0
    for comp in (field.v_r, field.v_theta):
        y = S @ np.asarray(comp, dtype=float).ravel()
        total += float(y @ y)
    return total


def pde_residual_grid(field, grid: PolarGrid, seg: Segmentation, norm="huber", valid=None, beta=1.0):
    """Discrete C1 on the lattice.

    ``norm`` is ``"huber"`` or ``"l1"`` for a summed scalar, or ``"raw"`` for
    the residual lattice (NaN where no stencil exists). ``valid`` further
    restricts the cells whose values may be used.
    """
    if field.shape != grid.shape:
        raise ValueError("field does not match grid")
    seg.check_grid(grid)
    avail = seg.mask if valid is None else seg.mask & np.asarray(valid, dtype=bool)
    A, cells = c1_operator(grid, avail)
    x = np.concatenate([np.asarray(field.v_r, float).ravel(), np.asarray(field.v_theta, float).ravel()])
    res = A @ x
    if norm == "raw":
        out = np.full(grid.shape, np.nan)
        out[cells[:, 0], cells[:, 1]] = res
        return out
    if norm == "huber":
        return float(np.sum(huber(res, beta)))
    if norm == "l1":
        return float(np.sum(np.abs(res)))
    raise ValueError(f"unknown norm {norm!r}")


def interior_residual_rms(field, grid: PolarGrid, seg: Segmentation) -> float:
    """RMS of the central-difference C1 residual (cells with both neighbours on both axes)."""
    A, _ = c1_operator(grid, seg.mask, central_only=True)
    x = np.concatenate([field.v_r.ravel(), field.v_theta.ravel()])
    res = A @ x
    return float(np.sqrt(np.mean(res**2)))
