"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np

from .domain import BoundaryConditionSet
from .phantom import DopplerFrame


def check_frame(frame) -> DopplerFrame:
    if not isinstance(frame, DopplerFrame):
        raise TypeError(f"expected a DopplerFrame, got {type(frame).__name__}")
    if not np.isfinite(frame.v_d[frame.valid]).all():
        raise ValueError("Doppler velocities must be finite on valid cells")
    if not frame.valid.any():
        raise ValueError("frame has no valid Doppler samples inside the cavity")
    return frame


def check_boundary(bc, frame: DopplerFrame) -> BoundaryConditionSet:
    if not isinstance(bc, BoundaryConditionSet):
        raise TypeError(f"expected a BoundaryConditionSet, got {type(bc).__name__}")
    idx = np.asarray(bc.indices)
    if len(idx) and (
        np.any(idx < 0)
        or np.any(idx[:, 0] >= frame.grid.n_r)
        or np.any(idx[:, 1] >= frame.grid.n_theta)
        or not frame.mask[idx[:, 0], idx[:, 1]].all()
    ):
        raise ValueError("boundary samples must lie inside the cavity")
    norms = np.linalg.norm(bc.normals, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("wall normals must have unit length")
    return bc


def check_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2 or not np.isfinite(X).all():
        raise ValueError("X must be a finite (n, 2) array of (r, theta)")
    return X
