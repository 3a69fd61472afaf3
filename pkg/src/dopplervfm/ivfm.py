"""One-shot vector flow mapping: equality-constrained weighted least squares.

Unknowns are ``x = [v_r; v_theta]`` over the cavity cells (row-major order).
The objective is ``sum_valid w (v_r - v_D)^2 + lambda_s (||S v_r||^2 + ||S v_theta||^2)``
with ``S`` the second-difference smoothing operator. Mass conservation is
imposed exactly at every cell with a central stencil (cells whose four
neighbours are all inside the cavity) and the free-slip condition at every
wall sample. The saddle-point system is factorised with a sparse LU.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .domain import BoundaryConditionSet, extract_boundary
from .phantom import DopplerFrame, VelocityField
from .physics import c1_operator, smoothing_operator
from .validation import check_boundary, check_frame, check_points

logger = logging.getLogger(__name__)

LAMBDA_S_DEFAULT = 1e-6
DELTA_REL = 1e-10


@dataclass
class KktSystem:
    h: sp.csr_matrix
    a: sp.csr_matrix
    rhs_primal: np.ndarray
    rhs_constraint: np.ndarray
    cells: np.ndarray  # (N, 2) lattice index of each unknown pair
    n_data: int
    n_c1: int
    n_c2: int
    grid: object = field(repr=False, default=None)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def delta(self) -> float:
        n = self.h.shape[0]
        return DELTA_REL * float(self.h.diagonal().sum()) / n

    def kkt_matrix(self, delta=None) -> sp.csc_matrix:
        delta = self.delta if delta is None else delta
        n, m = self.h.shape[0], self.a.shape[0]
        hreg = self.h + delta * sp.identity(n, format="csr")
        return sp.bmat([[hreg, self.a.T], [self.a, None]], format="csc") if m else hreg.tocsc()

    def kkt_rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_primal, self.rhs_constraint])

    def objective(self, x) -> float:
        """Quadratic objective ``0.5 x'Hx - f'x`` (equal to the least-squares cost up to a constant)."""
        return float(0.5 * x @ (self.h @ x) - self.rhs_primal @ x)

    def constraint_residual(self, x) -> float:
        if self.a.shape[0] == 0:
            return 0.0
        return float(np.max(np.abs(self.a @ x - self.rhs_constraint)))


def assemble_kkt(
    frame: DopplerFrame,
    bc: BoundaryConditionSet | None = None,
    lambda_s: float = LAMBDA_S_DEFAULT,
    constraints=("c1", "c2"),
) -> KktSystem:
    if lambda_s < 0:
        raise ValueError("lambda_s must be non-negative")
    unknown = set(constraints) - {"c1", "c2"}
    if unknown:
        raise ValueError(f"unknown constraints {sorted(unknown)}")
    grid = frame.grid
    mask = frame.mask
    if not mask.any():
        raise ValueError("empty cavity")
    data = frame.valid & (frame.weights > 0)
    if not data.any():
        raise ValueError("frame has no valid weighted Doppler samples")
    bc = extract_boundary(frame.seg, grid) if bc is None else bc

    cells = np.argwhere(mask)
    n = len(cells)
    flat = cells[:, 0] * grid.n_theta + cells[:, 1]
    lookup = np.full(grid.size, -1)
    lookup[flat] = np.arange(n)

    w = np.where(data, frame.weights, 0.0)[cells[:, 0], cells[:, 1]]
    v_d = np.where(data, frame.v_d, 0.0)[cells[:, 0], cells[:, 1]]
    S, _ = smoothing_operator(grid, frame.seg)
    S = S[:, flat]
    Q = (S.T @ S).tocsr()
    W = sp.diags(w)
    h = 2.0 * sp.block_diag([W + lambda_s * Q, lambda_s * Q], format="csr")
    h.eliminate_zeros()
    f = np.concatenate([2.0 * w * v_d, np.zeros(n)])

    blocks, rhs = [], []
    n_c1 = n_c2 = 0
    if "c1" in constraints:
        A_full, _ = c1_operator(grid, mask, central_only=True)
        cols = np.concatenate([flat, grid.size + flat])
        A1 = A_full[:, cols].tocsr()
        n_c1 = A1.shape[0]
        blocks.append(A1)
        rhs.append(np.zeros(n_c1))
    if "c2" in constraints and len(bc):
        rows = lookup[bc.indices[:, 0] * grid.n_theta + bc.indices[:, 1]]
        if np.any(rows < 0):
            raise ValueError("boundary samples must lie inside the cavity")
        n_c2 = len(rows)
        k = np.arange(n_c2)
        A2 = sp.csr_matrix(
            (
                np.concatenate([bc.normals[:, 0], bc.normals[:, 1]]),
                (np.concatenate([k, k]), np.concatenate([rows, n + rows])),
            ),
            shape=(n_c2, 2 * n),
        )
        blocks.append(A2)
        rhs.append(np.sum(bc.wall_velocity * bc.normals, axis=1))
    a = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, 2 * n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    return KktSystem(h, a, f, b, cells, int(data.sum()), n_c1, n_c2, grid)


def solve_kkt(system: KktSystem):
    """Solve the regularised saddle system. Returns ``(x, nu, info)``."""
    K = system.kkt_matrix()
    rhs = system.kkt_rhs()
    info = {"fallback": False}
    try:
        sol = spla.splu(K, permc_spec="COLAMD").solve(rhs)
        if not np.isfinite(sol).all():
            raise RuntimeError("non-finite factorisation result")
    except RuntimeError as exc:
        logger.warning("KKT factorisation failed (%s); using least-norm solve", exc)
        sol = spla.lsqr(K, rhs, atol=1e-14, btol=1e-14, iter_lim=20 * K.shape[0])[0]
        info["fallback"] = True
    n = system.h.shape[0]
    x, nu = sol[:n], sol[n:]
    info["constraint_residual"] = system.constraint_residual(x)
    return x, nu, info


def _to_field(system: KktSystem, x) -> VelocityField:
    n = system.n_cells
    shape = system.grid.shape
    v_r = np.zeros(shape)
    v_t = np.zeros(shape)
    v_r[system.cells[:, 0], system.cells[:, 1]] = x[:n]
    v_t[system.cells[:, 0], system.cells[:, 1]] = x[n:]
    return VelocityField(v_r, v_t)


def ivfm_solve(frame: DopplerFrame, bc: BoundaryConditionSet | None = None, lambda_s: float = LAMBDA_S_DEFAULT):
    """Reconstruct a frame. Returns ``(field, multipliers, info)``."""
    start = time.perf_counter()
    system = assemble_kkt(frame, bc, lambda_s)
    x, nu, info = solve_kkt(system)
    info.update(
        n_unknowns=int(system.h.shape[0]),
        n_c1=system.n_c1,
        n_c2=system.n_c2,
        lambda_s=float(lambda_s),
        wall_clock_s=time.perf_counter() - start,
    )
    return _to_field(system, x), nu, info


class IVFMReconstructor(BaseEstimator):
    """Estimator wrapper around :func:`ivfm_solve`."""

    def __init__(self, lambda_s=LAMBDA_S_DEFAULT):
        self.lambda_s = lambda_s

    def fit(self, frame: DopplerFrame, boundary: BoundaryConditionSet | None = None):
        frame = check_frame(frame)
        bc = None if boundary is None else check_boundary(boundary, frame)
        self.field_, self.multipliers_, info = ivfm_solve(frame, bc, self.lambda_s)
        self.grid_ = frame.grid
        info["method"] = "ivfm"
        self.diagnostics_ = info
        return self

    def predict(self, X=None):
        """Field on the fitted grid, or bilinear interpolation at physical ``(r, theta)`` rows of ``X``."""
        check_is_fitted(self, "field_")
        if X is None:
            return self.field_
        X = check_points(X)
        g = self.grid_
        out = []
        for comp in (self.field_.v_r, self.field_.v_theta):
            interp = RegularGridInterpolator((g.r, g.theta), comp, bounds_error=False, fill_value=0.0)
            out.append(interp(X))
        return np.column_stack(out)


def calibrate_lambda(frames, candidates, bc=None):
    """Pick ``lambda_s`` minimising the median nRMSE over reference-carrying frames.

    Returns ``(best, curve)`` where ``curve`` is a list of ``(lambda_s, median_nrmse)``.
    Ties go to the earliest candidate.
    """
    from .metrics import aggregate_robust, nrmse

    frames = list(frames)
    candidates = [float(c) for c in candidates]
    if not frames:
        raise ValueError("need at least one frame")
    if not candidates:
        raise ValueError("need at least one candidate")
    if any(f.reference is None for f in frames):
        raise ValueError("calibration frames must carry reference fields")
    curve = []
    for lam in candidates:
        errs = [nrmse(ivfm_solve(f, bc, lam)[0], f.reference, f.mask) for f in frames]
        curve.append((lam, aggregate_robust(errs)[0]))
    best = min(range(len(curve)), key=lambda k: (curve[k][1], k))
    return candidates[best], curve
