"""Divergence-free ground-truth flows and synthetic color-Doppler frames."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .domain import PolarGrid, Segmentation


@dataclass(frozen=True)
class VelocityField:
    """Radial and angular velocity lattices (m/s), shape ``(n_r, n_theta)``."""

    v_r: np.ndarray
    v_theta: np.ndarray

    def __post_init__(self):
        v_r = np.asarray(self.v_r, dtype=float)
        v_t = np.asarray(self.v_theta, dtype=float)
        if v_r.shape != v_t.shape or v_r.ndim != 2:
            raise ValueError(f"component shapes differ or are not 2-D: {v_r.shape} vs {v_t.shape}")
        if not (np.isfinite(v_r).all() and np.isfinite(v_t).all()):
            raise ValueError("velocity field contains non-finite values")
        object.__setattr__(self, "v_r", v_r)
        object.__setattr__(self, "v_theta", v_t)

    @property
    def shape(self):
        return self.v_r.shape

    @classmethod
    def zeros(cls, shape) -> "VelocityField":
        return cls(np.zeros(shape), np.zeros(shape))

    def masked(self, mask) -> "VelocityField":
        mask = np.asarray(mask, dtype=bool)
        return VelocityField(np.where(mask, self.v_r, 0.0), np.where(mask, self.v_theta, 0.0))

    def speed(self) -> np.ndarray:
        return np.hypot(self.v_r, self.v_theta)


@dataclass(frozen=True)
class StreamTerm:
    amplitude: float
    mode_r: int = 1
    mode_theta: int = 1

    def __post_init__(self):
        if int(self.mode_r) < 1 or int(self.mode_theta) < 1:
            raise ValueError("stream-function modes must be positive integers")


@dataclass(frozen=True)
class StreamFunctionSpec:
    """Sum of sine modes on the cavity bounding box; vanishes on the box edges."""

    terms: tuple = ()

    @classmethod
    def single_vortex(cls, amplitude=1e-3) -> "StreamFunctionSpec":
        return cls((StreamTerm(amplitude, 1, 1),))

    def scaled(self, factors) -> "StreamFunctionSpec":
        return StreamFunctionSpec(
            tuple(StreamTerm(t.amplitude * f, t.mode_r, t.mode_theta) for t, f in zip(self.terms, factors))
        )


def cavity_box(grid: PolarGrid, seg: Segmentation) -> tuple[float, float, float, float]:
    """Physical bounding box ``(r_a, r_b, theta_a, theta_b)`` of the cavity."""
    i0, i1, j0, j1 = seg.bounding_box()
    r, th = grid.r, grid.theta
    return float(r[i0]), float(r[i1]), float(th[j0]), float(th[j1])


def stream_function_derivatives(spec: StreamFunctionSpec, r, theta, box) -> dict:
    """Closed-form velocity and first derivatives at points ``(r, theta)``.

    Returns a dict with ``psi, v_r, v_theta, dvr_dr, dvr_dtheta, dvtheta_dr,
    dvtheta_dtheta``, all broadcast to the shape of the inputs.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    r_a, r_b, t_a, t_b = box
    if not (r_b > r_a and t_b > t_a):
        raise ValueError("cavity bounding box has zero extent")
    out = {k: np.zeros(np.broadcast(r, theta).shape) for k in
           ("psi", "psi_r", "psi_t", "psi_rt", "psi_rr", "psi_tt")}
    for term in spec.terms:
        a = math.pi * term.mode_r / (r_b - r_a)
        b = math.pi * term.mode_theta / (t_b - t_a)
        sr, cr = np.sin(a * (r - r_a)), np.cos(a * (r - r_a))
        st, ct = np.sin(b * (theta - t_a)), np.cos(b * (theta - t_a))
        amp = term.amplitude
        out["psi"] += amp * sr * st
        out["psi_r"] += amp * a * cr * st
        out["psi_t"] += amp * b * sr * ct
        out["psi_rt"] += amp * a * b * cr * ct
        out["psi_rr"] -= amp * a * a * sr * st
        out["psi_tt"] -= amp * b * b * sr * st
    # v_r = psi_t / r, v_theta = -psi_r
    return {
        "psi": out["psi"],
        "v_r": out["psi_t"] / r,
        "v_theta": -out["psi_r"],
        "dvr_dr": out["psi_rt"] / r - out["psi_t"] / r**2,
        "dvr_dtheta": out["psi_tt"] / r,
        "dvtheta_dr": -out["psi_rr"],
        "dvtheta_dtheta": -out["psi_rt"],
    }


def stream_function_field(spec: StreamFunctionSpec, grid: PolarGrid, seg: Segmentation) -> VelocityField:
    """Velocity of ``spec`` on the lattice, zero outside the cavity."""
    seg.check_grid(grid)
    R, T = grid.mesh()
    d = stream_function_derivatives(spec, R, T, cavity_box(grid, seg))
    return VelocityField(d["v_r"], d["v_theta"]).masked(seg.mask)


@dataclass(frozen=True)
class DopplerFrame:
    """Observed sign-inverted Doppler velocity with weights, cavity and validity masks."""

    v_d: np.ndarray
    weights: np.ndarray
    seg: Segmentation
    grid: PolarGrid
    valid: np.ndarray
    reference: Optional[VelocityField] = None
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v_d = np.asarray(self.v_d, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        self.seg.check_grid(self.grid)
        for name, arr in (("v_d", v_d), ("weights", w), ("valid", valid)):
            if arr.shape != self.grid.shape:
                raise ValueError(f"{name} shape {arr.shape} does not match grid {self.grid.shape}")
        if np.any(valid & ~self.seg.mask):
            raise ValueError("valid cells must lie inside the cavity")
        if not np.isfinite(v_d[valid]).all():
            raise ValueError("v_d must be finite on valid cells")
        if np.any((w < 0) | (w > 1)) or not np.isfinite(w).all():
            raise ValueError("weights must lie in [0, 1]")
        if self.reference is not None and self.reference.shape != self.grid.shape:
            raise ValueError("reference field shape does not match grid")
        object.__setattr__(self, "v_d", v_d)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "valid", valid)

    @property
    def mask(self) -> np.ndarray:
        return self.seg.mask


def power_weights(grid: PolarGrid, seg: Segmentation, floor=0.2) -> np.ndarray:
    """Synthetic normalised Doppler power decaying linearly with depth from 1 to ``floor``."""
    R, _ = grid.mesh()
    depth = (R - grid.r[0]) / (grid.r[-1] - grid.r[0])
    return np.where(seg.mask, 1.0 - (1.0 - floor) * depth, 0.0)


def noise_sigma(v_r: np.ndarray, mask: np.ndarray, snr_db: float) -> float:
    """Amplitude-referenced noise level ``rms(v_r over mask) * 10**(-snr/20)``."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    rms = float(np.sqrt(np.mean(v_r[mask] ** 2)))
    return rms * 10.0 ** (-snr_db / 20.0)


def synthesize_doppler(
    field: VelocityField,
    seg: Segmentation,
    grid: PolarGrid,
    snr_db: float = 50.0,
    seed: int = 0,
    weights: str = "uniform",
) -> DopplerFrame:
    """Doppler frame ``v_d = v_r + noise`` inside the cavity.

    The reference field is attached to the frame so solvers can be scored.
    """
    seg.check_grid(grid)
    if field.shape != grid.shape:
        raise ValueError("field does not match grid")
    mask = seg.mask
    sigma = noise_sigma(field.v_r, mask, snr_db)
    v_d = field.v_r.copy()
    if sigma > 0:
        rng = np.random.default_rng(seed)
        v_d = v_d + sigma * rng.standard_normal(grid.shape)
    v_d = np.where(mask, v_d, 0.0)
    if weights == "uniform":
        w = mask.astype(float)
    elif weights == "power":
        w = power_weights(grid, seg)
    else:
        raise ValueError(f"unknown weights mode {weights!r}")
    return DopplerFrame(
        v_d=v_d,
        weights=w,
        seg=seg,
        grid=grid,
        valid=mask.copy(),
        reference=field.masked(mask),
        provenance={"generator": "stream_function", "seed": int(seed), "snr_db": float(snr_db), "degrade": None},
    )


DEGRADE_MODES = ("sparse_deterministic", "sparse_random", "truncate")


@dataclass(frozen=True)
class DegradeSpec:
    mode: str
    m: int = 10
    n: int = 9
    pct: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in DEGRADE_MODES:
            raise ValueError(f"unknown degrade mode {self.mode!r}")
        if self.mode.startswith("sparse") and not (0 <= self.n < self.m):
            raise ValueError(f"sparse masking needs 0 <= n < m, got m={self.m}, n={self.n}")
        if self.mode == "truncate" and not (0 <= self.pct < 100):
            raise ValueError(f"truncation percentage must be in [0, 100), got {self.pct}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "m": self.m, "n": self.n, "pct": self.pct, "seed": self.seed}


def kept_scanlines(n_theta: int, spec: DegradeSpec) -> np.ndarray:
    """Boolean vector over scanlines, ``True`` for scanlines that keep their data."""
    keep = np.ones(n_theta, dtype=bool)
    if spec.mode == "sparse_deterministic":
        if spec.n == 0:
            return keep
        centre = n_theta // 2
        phase = np.abs(np.arange(n_theta) - centre) % spec.m
        keep = (phase == 0) | (phase > spec.n)
    elif spec.mode == "sparse_random":
        if spec.n == 0:
            return keep
        rng = np.random.default_rng(spec.seed)
        for start in range(0, n_theta, spec.m):
            block = int(rng.integers(0, spec.n + 1))
            offset = int(rng.integers(0, spec.m - block + 1))
            keep[start + offset : min(start + offset + block, start + spec.m)] = False
    else:
        # round away float noise before ceil (e.g. 0.7 * 80)
        n_cut = math.ceil(round(spec.pct * n_theta / 100.0, 9))
        left = n_cut // 2
        right = n_cut - left
        keep[:left] = False
        if right:
            keep[n_theta - right :] = False
    return keep


def degrade(frame: DopplerFrame, spec: DegradeSpec) -> DopplerFrame:
    """Invalidate scanlines per ``spec``; data at surviving cells is untouched."""
    keep = kept_scanlines(frame.grid.n_theta, spec)
    valid = frame.valid & keep[None, :]
    prov = dict(frame.provenance)
    history = prov.get("degrade") or []
    if isinstance(history, dict):
        history = [history]
    prov["degrade"] = list(history) + [spec.to_dict()]
    return replace(
        frame,
        v_d=np.where(valid, frame.v_d, 0.0),
        weights=np.where(valid, frame.weights, 0.0),
        valid=valid,
        provenance=prov,
    )


def phantom_cine(
    grid: PolarGrid,
    seg: Segmentation,
    n_frames: int,
    amplitude: float = 1e-3,
    cycles: float = 0.5,
    secondary: float = 0.5,
    snr_db: float = 50.0,
    seed: int = 0,
) -> list[DopplerFrame]:
    """Cine of frames whose vortex strengths vary over time.

    The primary (1, 1) vortex follows ``A0 * sin(2 pi (t + 1/2) / K * cycles)`` and a
    secondary (2, 1) mode of relative size ``secondary`` follows the cosine, so frames
    differ in shape as well as scale. The half-frame phase offset keeps every frame
    away from the all-zero state.
    """
    base = StreamFunctionSpec(
        (StreamTerm(amplitude, 1, 1), StreamTerm(amplitude * secondary, 2, 1))
    )
    frames = []
    for t in range(n_frames):
        phase = 2 * math.pi * (t + 0.5) / n_frames * cycles
        spec = base.scaled((math.sin(phase), math.cos(phase)))
        truth = stream_function_field(spec, grid, seg)
        frame = synthesize_doppler(truth, seg, grid, snr_db=snr_db, seed=seed + t)
        frame.provenance.update({"frame_index": t, "n_frames": n_frames, "cycles": cycles})
        frames.append(frame)
    return frames
