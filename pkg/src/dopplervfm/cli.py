"""Command-line interface: ``dopplervfm <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from .domain import sector_grid, sector_segmentation
from .experiments import EXPERIMENTS, METHODS, ablation, common_region, frame_scores, full_vs_sparse, reconstruct_many
from .experiments import summarise, timing, truncation
from .io import FrameFormatError, read_frame, read_solution, write_frame, write_solution
from .mlp import LAYER_SIZES, WeightFileError, load_weights
from .phantom import DEGRADE_MODES, DegradeSpec, degrade, phantom_cine
from .pinn import pretrain_reference
from .plot import write_quiver

logger = logging.getLogger("dopplervfm")

CSV_HEADER = ["frame_id", "method", "r2_vr", "r2_vtheta", "nrmse_pct"]


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


def resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get("VFM_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"VFM_SEED must be an integer, got {env!r}") from exc


def parse_grid(text):
    try:
        n_r, n_t = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like 40x100, got {text!r}") from exc
    if n_r < 4 or n_t < 4:
        raise argparse.ArgumentTypeError("grid needs at least 4 cells per axis")
    return n_r, n_t


def parse_snr(text):
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"snr must be a number or 'inf', got {text!r}") from exc


def _expand(patterns):
    paths = []
    for p in patterns:
        hits = sorted(glob.glob(p))
        paths.extend(hits if hits else [p])
    return [Path(p) for p in paths]


def _frame_id(path):
    return Path(path).stem


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"cannot create output directory {out}: {exc}") from exc
    return out


# -- commands -------------------------------------------------------------------


def cmd_generate(args):
    n_r, n_t = args.grid
    if args.frames < 1:
        raise UsageError("--frames must be positive")
    grid = sector_grid(n_r, n_t)
    seg = sector_segmentation(grid, args.margin)
    seed = resolve_seed(args.seed)
    frames = phantom_cine(grid, seg, args.frames, amplitude=args.amplitude, cycles=args.cycles, snr_db=args.snr, seed=seed)
    out = _out_dir(args.out)
    width = max(4, len(str(args.frames - 1)))
    for k, frame in enumerate(frames):
        write_frame(frame, out / f"frame_{k:0{width}d}.json")
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def cmd_degrade(args):
    spec = DegradeSpec(args.mode, m=args.m, n=args.n, pct=args.pct, seed=resolve_seed(args.seed))
    out = _out_dir(args.out)
    paths = _expand(args.frames)
    for p in paths:
        write_frame(degrade(read_frame(p), spec), out / p.name)
    print(f"degraded {len(paths)} frames ({args.mode}) into {out}")
    return 0


def cmd_pretrain(args):
    frame = read_frame(args.frame)
    pretrain_reference(frame, args.out, n_iter=args.iters, random_state=resolve_seed(args.seed))
    print(f"saved pre-optimised weights to {args.out}")
    return 0


def cmd_reconstruct(args):
    seed = resolve_seed(args.seed)
    init = None
    if args.pretrained:
        if args.method == "ivfm":
            raise UsageError("--pretrained only applies to network methods")
        try:
            init = load_weights(args.pretrained, LAYER_SIZES)
        except WeightFileError as exc:
            raise UsageError(str(exc)) from exc
        except OSError as exc:
            raise UsageError(f"cannot read weights: {exc}") from exc
    paths = _expand(args.frames)
    frames = [read_frame(p) for p in paths]
    out = _out_dir(args.out)
    kw = dict(n_iter=args.iters, init_weights=init, lambda_s=args.lambda_s, seed=seed, dual_stage=not args.single_stage)
    results = reconstruct_many(frames, args.method, args.jobs, **kw)
    failed = []
    times = []
    for p, frame, (field, diag, err) in zip(paths, frames, results):
        fid = _frame_id(p)
        if err is not None:
            failed.append(fid)
            logger.error("frame %s failed: %s", fid, err)
            (out / f"{fid}.{args.method}.error.json").write_text(json.dumps({"frame_id": fid, "error": err}))
            continue
        times.append(diag["wall_clock_s"])
        write_solution(out / f"{fid}.{args.method}.json", fid, args.method, field, frame.grid, frame.mask, diag)
    summary = {
        "method": args.method,
        "n_frames": len(frames),
        "failed": failed,
        "median_wall_clock_s": float(sorted(times)[len(times) // 2]) if times else None,
        "wall_clock_s": times,
    }
    (out / f"run_{args.method}.summary").write_text(json.dumps(summary, indent=2))
    print(f"reconstructed {len(frames) - len(failed)}/{len(frames)} frames with {args.method}")
    return 1 if failed else 0


def cmd_eval(args):
    frames = {_frame_id(p): read_frame(p) for p in _expand(args.frames)}
    sols = [read_solution(p) for p in _expand(args.solutions)]
    missing = sorted({s["frame_id"] for s in sols} - set(frames))
    if missing:
        raise RuntimeError(f"no reference frame for solution ids: {', '.join(missing)}")
    region = None
    if args.region == "common":
        region = common_region(list(frames.values()), args.levels)
    rows, per_method = [], {}
    for s in sorted(sols, key=lambda s: (s["method"], s["frame_id"])):
        frame = frames[s["frame_id"]]
        if frame.reference is None:
            raise RuntimeError(f"frame {s['frame_id']} carries no reference field")
        mask = frame.mask if region is None else frame.mask & region
        sc = frame_scores(s["field"], frame.reference, mask)
        rows.append({"frame_id": s["frame_id"], "method": s["method"], **sc})
        per_method.setdefault(s["method"], []).append(sc)
    with open(args.out_csv, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (r[k] if isinstance(r[k], str) else repr(float(r[k]))) for k in CSV_HEADER})
    report = {"region": args.region, "rows": rows, "summary": [summarise(v, {"method": m}) for m, v in sorted(per_method.items())]}
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(report, indent=2))
    for r in report["summary"]:
        print(
            f"{r['method']}: r2_vr {r['r2_vr']:.3f} +/- {r['r2_vr_rstd']:.3f}  r2_vtheta {r['r2_vtheta']:.3f} +/- "
            f"{r['r2_vtheta_rstd']:.3f}  nRMSE {r['nrmse_pct']:.2f} +/- {r['nrmse_pct_rstd']:.2f} %"
        )
    return 0


def _write_rows(out, name, rows):
    (out / f"{name}.json").write_text(json.dumps(rows, indent=2))
    keys = [k for k in rows[0] if not isinstance(rows[0][k], list)] if rows else []
    with open(out / f"{name}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def cmd_experiment(args):
    methods = [m for m in args.methods.split(",") if m] if args.methods else []
    if not methods:
        raise UsageError("method set must not be empty")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods: {', '.join(bad)}")
    frames = [read_frame(p) for p in _expand(args.frames)]
    if not frames:
        raise UsageError("no frames matched")
    out = _out_dir(args.out)
    seed = resolve_seed(args.seed)
    init = load_weights(args.pretrained) if args.pretrained else None
    kw = dict(n_iter=args.iters, init_weights=init, seed=seed)
    start = time.perf_counter()
    if args.id == "ablation":
        if init is None:
            ref = frames[len(frames) // 3]
            init = pretrain_reference(ref, out / "pretrained.bin", n_iter=args.iters, random_state=seed)
        rows = ablation(frames, init, n_iter=args.iters, seed=seed, method=methods[0], jobs=args.jobs)
    elif args.id == "full_vs_sparse":
        rows = full_vs_sparse(frames, methods, jobs=args.jobs, **kw)
    elif args.id == "truncation":
        rows = truncation(frames, methods, jobs=args.jobs, **kw)
    else:
        rows = timing(frames, methods, jobs=args.jobs, **kw)
    _write_rows(out, args.id, rows)
    print(f"{args.id}: {len(rows)} rows in {time.perf_counter() - start:.1f} s -> {out}")
    return 0


def cmd_plot(args):
    sol = read_solution(args.solution)
    title = args.title if args.title is not None else f"{sol['frame_id']} ({sol['method']})"
    write_quiver(args.out, sol["field"], sol["grid"], sol["mask"], decimate=args.decimate, title=title)
    print(f"wrote {args.out}")
    return 0


def cmd_acceptance(args):
    from .acceptance import run_acceptance

    report = run_acceptance(only=args.only, report_path=args.report)
    return 0 if all(r["pass"] for r in report) else 1


# -- parser ---------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="dopplervfm", description="Vector flow mapping from color Doppler frames.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic phantom cine")
    g.add_argument("--frames", type=int, default=100)
    g.add_argument("--grid", type=parse_grid, default=(40, 100), help="N_RxN_THETA, e.g. 40x100")
    g.add_argument("--snr", type=parse_snr, default=50.0, help="dB, or inf for noiseless")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--margin", type=int, default=0)
    g.add_argument("--amplitude", type=float, default=1e-3)
    g.add_argument("--cycles", type=float, default=0.5)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("degrade", help="mask or truncate scanlines")
    d.add_argument("frames", nargs="+")
    d.add_argument("--mode", choices=DEGRADE_MODES, required=True)
    d.add_argument("--m", type=int, default=10)
    d.add_argument("--n", type=int, default=9)
    d.add_argument("--pct", type=float, default=0.0)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_degrade)

    t = sub.add_parser("pretrain", help="fit a reference frame and save network weights")
    t.add_argument("frame")
    t.add_argument("--iters", type=int, default=2500)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_pretrain)

    r = sub.add_parser("reconstruct", help="estimate velocity fields")
    r.add_argument("frames", nargs="+")
    r.add_argument("--method", choices=METHODS, required=True)
    r.add_argument("--iters", type=int, default=2500)
    r.add_argument("--pretrained")
    r.add_argument("--lambda-s", type=float, default=1e-6)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--single-stage", action="store_true", help="AdamW only, no L-BFGS refinement")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("eval", help="score solutions against reference fields")
    e.add_argument("--solutions", nargs="+", required=True)
    e.add_argument("--frames", nargs="+", required=True)
    e.add_argument("--region", choices=("all", "common"), default="all")
    e.add_argument("--levels", type=float, nargs="+", default=[20, 40, 50, 60, 70], help="truncation levels for --region common")
    e.add_argument("--out-csv", required=True)
    e.add_argument("--out-json")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run a comparison table")
    x.add_argument("--id", choices=EXPERIMENTS, required=True)
    x.add_argument("--methods", default="ivfm,rb-pinn,al-pinn")
    x.add_argument("--frames", nargs="+", required=True)
    x.add_argument("--iters", type=int, default=2500)
    x.add_argument("--pretrained")
    x.add_argument("--seed", type=int, default=None)
    x.add_argument("--jobs", type=int, default=1)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)

    q = sub.add_parser("plot", help="render a solution as an SVG quiver plot")
    q.add_argument("solution")
    q.add_argument("--out", required=True)
    q.add_argument("--decimate", type=int, default=4)
    q.add_argument("--title")
    q.set_defaults(func=cmd_plot)

    a = sub.add_parser("acceptance", help="run the acceptance battery")
    a.add_argument("--only", nargs="*", help="criterion ids, e.g. A1 A6")
    a.add_argument("--report", default="acceptance_report.json")
    a.set_defaults(func=cmd_acceptance)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    for name in ("iters", "jobs", "decimate"):
        if hasattr(args, name) and getattr(args, name) < 1:
            parser.error(f"--{name} must be >= 1")
    if getattr(args, "lambda_s", 0.0) < 0 or (hasattr(args, "lambda_s") and not math.isfinite(args.lambda_s)):
        parser.error("--lambda-s must be a finite non-negative number")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        if isinstance(exc, (FrameFormatError, WeightFileError)):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
