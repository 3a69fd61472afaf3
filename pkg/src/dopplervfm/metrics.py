"""Reconstruction scores: squared correlation, normalised vector RMSE, robust aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .phantom import VelocityField

MAD_SCALE = 1.4826
COMPONENTS = ("v_r", "v_theta")


def _component(f: VelocityField, component):
    if component not in COMPONENTS:
        raise ValueError(f"component must be one of {COMPONENTS}")
    return getattr(f, component)


def _stack(fields):
    return fields if isinstance(fields, (list, tuple)) else [fields]


def squared_correlation(est, ref, mask, component="v_r", mode="pooled"):
    """Squared Pearson correlation over masked cells.

    ``est``/``ref`` may be single fields or equal-length sequences (a cine).
    ``mode="pooled"`` correlates all frames' samples together and returns a
    float; ``mode="per_frame"`` returns one value per frame.
    """
    ests, refs = _stack(est), _stack(ref)
    if len(ests) != len(refs):
        raise ValueError("estimate and reference sequences differ in length")
    masks = mask if isinstance(mask, (list, tuple)) else [mask] * len(refs)
    pairs = []
    for e, r, m in zip(ests, refs, masks):
        m = np.asarray(m, dtype=bool)
        pairs.append((_component(e, component)[m].astype(float), _component(r, component)[m].astype(float)))
    if mode == "per_frame":
        return [_r2(a, b) for a, b in pairs]
    if mode != "pooled":
        raise ValueError("mode must be 'pooled' or 'per_frame'")
    return _r2(np.concatenate([p[0] for p in pairs]), np.concatenate([p[1] for p in pairs]))


def _r2(a, b):
    if a.size < 2:
        raise ValueError("need at least two samples for a correlation")
    a = a - a.mean()
    b = b - b.mean()
    sb = float(np.sqrt(b @ b))
    if sb == 0 or sb <= 1e-14 * np.abs(b).max(initial=0.0):
        raise ValueError("correlation undefined: reference is constant over the mask")
    sa = float(np.sqrt(a @ a))
    if sa == 0:
        return 0.0
    rho = float(a @ b) / (sa * sb)
    return min(1.0, rho * rho)


def nrmse(est: VelocityField, ref: VelocityField, mask) -> float:
    """Vector RMS error over ``mask`` as a percentage of the maximum reference speed there."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("mask is empty")
    vmax = float(np.max(np.hypot(ref.v_r[m], ref.v_theta[m])))
    if vmax == 0:
        raise ValueError("reference has zero maximum speed")
    err2 = (est.v_r[m] - ref.v_r[m]) ** 2 + (est.v_theta[m] - ref.v_theta[m]) ** 2
    return 100.0 * float(np.sqrt(np.mean(err2))) / vmax


def aggregate_robust(values, deviation="median"):
    """``(median, 1.4826 * MAD)``; MAD is the median absolute deviation by default, or the mean with ``deviation="mean"``."""
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        raise ValueError("cannot aggregate an empty list")
    med = float(np.median(x))
    dev = np.abs(x - med)
    if deviation == "median":
        mad = float(np.median(dev))
    elif deviation == "mean":
        mad = float(np.mean(dev))
    else:
        raise ValueError("deviation must be 'median' or 'mean'")
    return med, MAD_SCALE * mad


@dataclass
class MetricsReport:
    r2_vr: float
    r2_vtheta: float
    nrmse: float
    per_frame: list = field(default_factory=list)
    median: float = float("nan")
    robust_std: float = float("nan")

    def __post_init__(self):
        for v in (self.r2_vr, self.r2_vtheta):
            if not 0.0 <= v <= 1.0:
                raise ValueError("r2 must lie in [0, 1]")
        if self.nrmse < 0:
            raise ValueError("nrmse must be non-negative")

    @classmethod
    def from_fields(cls, ests, refs, masks) -> "MetricsReport":
        ests, refs = _stack(ests), _stack(refs)
        masks = masks if isinstance(masks, (list, tuple)) else [masks] * len(refs)
        per = [nrmse(e, r, m) for e, r, m in zip(ests, refs, masks)]
        med, sd = aggregate_robust(per)
        return cls(
            squared_correlation(ests, refs, list(masks), "v_r"),
            squared_correlation(ests, refs, list(masks), "v_theta"),
            med,
            per,
            med,
            sd,
        )

    def to_dict(self) -> dict:
        return {
            "r2_vr": self.r2_vr,
            "r2_vtheta": self.r2_vtheta,
            "nrmse": self.nrmse,
            "per_frame": list(self.per_frame),
            "median": self.median,
            "robust_std": self.robust_std,
        }
