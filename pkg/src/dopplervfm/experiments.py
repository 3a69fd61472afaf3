"""Experiment harness: method dispatch, frame-parallel execution and the comparison tables."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from threadpoolctl import threadpool_limits

from .ivfm import LAMBDA_S_DEFAULT, IVFMReconstructor
from .metrics import aggregate_robust, nrmse, squared_correlation
from .phantom import DegradeSpec, degrade, kept_scanlines
from .pinn import ALPinnReconstructor, RBPinnReconstructor

logger = logging.getLogger(__name__)

METHODS = ("ivfm", "rb-pinn", "al-pinn")
EXPERIMENTS = ("ablation", "full_vs_sparse", "truncation", "timing")
TRUNCATION_LEVELS = (20, 40, 50, 60, 70)


def make_estimator(method, n_iter=2500, init_weights=None, lambda_s=LAMBDA_S_DEFAULT, seed=0, dual_stage=True):
    if method == "ivfm":
        return IVFMReconstructor(lambda_s=lambda_s)
    kw = dict(n_iter=n_iter, init_weights=init_weights, random_state=seed, dual_stage=dual_stage)
    if method == "rb-pinn":
        return RBPinnReconstructor(**kw)
    if method == "al-pinn":
        return ALPinnReconstructor(**kw)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def reconstruct(frame, method, **kw):
    """Fit one frame single-threaded. Returns ``(field, diagnostics)``."""
    with threadpool_limits(1):
        est = make_estimator(method, **kw).fit(frame)
    return est.field_, est.diagnostics_


def _task(args):
    frame, method, kw = args
    try:
        field, diag = reconstruct(frame, method, **kw)
        return field, diag, None
    except Exception as exc:  # noqa: BLE001 - reported per frame, the run continues
        logger.exception("solve failed")
        return None, {"method": method}, f"{type(exc).__name__}: {exc}"


def run_tasks(tasks, jobs=1):
    """Run ``(frame, method, kwargs)`` tasks, results in input order."""
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_task, tasks))


def reconstruct_many(frames, method, jobs=1, **kw):
    """Reconstruct frames in input order; failures come back as ``(None, diag, error)``."""
    return run_tasks([(f, method, kw) for f in frames], jobs)


def frame_scores(field, ref, mask):
    return {
        "r2_vr": squared_correlation(field, ref, mask, "v_r"),
        "r2_vtheta": squared_correlation(field, ref, mask, "v_theta"),
        "nrmse_pct": nrmse(field, ref, mask),
    }


def summarise(scores, extra=None):
    row = dict(extra or {})
    for key in ("r2_vr", "r2_vtheta", "nrmse_pct"):
        med, sd = aggregate_robust([s[key] for s in scores])
        row[key] = med
        row[key + "_rstd"] = sd
    return row


def _require_refs(frames):
    if any(f.reference is None for f in frames):
        raise ValueError("experiments need frames with reference fields")


def _check_methods(methods):
    methods = list(methods)
    if not methods:
        raise ValueError("method set must not be empty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    return methods


def full_vs_sparse(frames, methods=METHODS, sparse=DegradeSpec("sparse_deterministic", m=10, n=9), jobs=1, **kw):
    """Scores with full data and with masked scanlines, one row per (method, data)."""
    methods = _check_methods(methods)
    _require_refs(frames)
    rows = []
    for method in methods:
        for label, fs in (("full", frames), ("sparse", [degrade(f, sparse) for f in frames])):
            out = reconstruct_many(fs, method, jobs, **kw)
            scores = [frame_scores(o[0], f.reference, f.mask) for o, f in zip(out, fs) if o[0] is not None]
            rows.append(summarise(scores, {"method": method, "data": label, "n_failed": sum(o[0] is None for o in out)}))
    return rows


def common_region(frames, levels=TRUNCATION_LEVELS):
    """Cavity cells that keep their data at every truncation level."""
    grid = frames[0].grid
    keep = np.ones(grid.n_theta, dtype=bool)
    for pct in levels:
        keep &= kept_scanlines(grid.n_theta, DegradeSpec("truncate", pct=pct))
    return frames[0].mask & keep[None, :]


def truncation(frames, methods=("ivfm",), levels=TRUNCATION_LEVELS, jobs=1, **kw):
    """Scores inside the common region for each truncation percentage (0 = no truncation)."""
    methods = _check_methods(methods)
    _require_refs(frames)
    region = common_region(frames, levels)
    rows = []
    for method in methods:
        for pct in (0, *levels):
            fs = frames if pct == 0 else [degrade(f, DegradeSpec("truncate", pct=pct)) for f in frames]
            out = reconstruct_many(fs, method, jobs, **kw)
            scores = [frame_scores(o[0], f.reference, region & f.mask) for o, f in zip(out, fs) if o[0] is not None]
            rows.append(summarise(scores, {"method": method, "truncation_pct": pct, "per_frame_nrmse": [s["nrmse_pct"] for s in scores]}))
    return rows


def timing(frames, methods=METHODS, jobs=1, **kw):
    methods = _check_methods(methods)
    rows = []
    for method in methods:
        out = reconstruct_many(frames, method, jobs, **kw)
        times = [o[1]["wall_clock_s"] for o in out if o[0] is not None]
        med, sd = aggregate_robust(times) if times else (float("nan"), float("nan"))
        rows.append({"method": method, "median_wall_clock_s": med, "wall_clock_rstd": sd, "n_frames": len(times)})
    return rows


def ablation(frames, pretrained, n_iter=500, seed=0, method="rb-pinn", jobs=1):
    """2x2 table over (pretrained init?, dual-stage?) at a matched objective-evaluation budget.

    Dual-stage runs go first; each single-stage run then gets as many AdamW
    iterations as its dual-stage counterpart spent objective evaluations on
    the same frame.
    """
    _require_refs(frames)
    rows = []
    for use_pre in (False, True):
        init = pretrained if use_pre else None
        dual = reconstruct_many(frames, method, jobs, n_iter=n_iter, init_weights=init, seed=seed, dual_stage=True)
        tasks = []
        for f, d in zip(frames, dual):
            budget = d[1]["n_evals"] if d[0] is not None else n_iter
            tasks.append((f, method, dict(n_iter=budget, init_weights=init, seed=seed, dual_stage=False)))
        single = run_tasks(tasks, jobs)
        for is_dual, out in ((False, single), (True, dual)):
            scores = [frame_scores(o[0], f.reference, f.mask) for o, f in zip(out, frames) if o[0] is not None]
            row = summarise(scores, {"pretrained": use_pre, "dual_stage": is_dual})
            row["per_frame_nrmse"] = [s["nrmse_pct"] for s in scores]
            row["median_evals"] = float(np.median([o[1]["n_evals"] for o in out if o[0] is not None]))
            row["median_final_loss"] = float(np.median([o[1]["final_loss"] for o in out if o[0] is not None]))
            rows.append(row)
    return sorted(rows, key=lambda r: (r["pretrained"], r["dual_stage"]))
