"""Acceptance battery: one function per criterion, each returning a report row.

Rows follow ``{criterion_id, required, measured, pass, module, detail}``.
Expensive fixtures (phantom frames, pre-optimised weights, solved fields) are
regenerated from seeds and shared through :class:`AcceptanceContext`.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import replace
from functools import cached_property
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io as vio
from .domain import Segmentation, build_grid, extract_boundary, sector_grid, sector_segmentation
from .experiments import ablation, common_region, frame_scores, reconstruct, reconstruct_many
from .ivfm import assemble_kkt, ivfm_solve, solve_kkt
from .metrics import aggregate_robust, nrmse, squared_correlation
from .mlp import load_weights, mlp_init, network, save_weights
from .phantom import (
    DegradeSpec,
    StreamFunctionSpec,
    StreamTerm,
    VelocityField,
    cavity_box,
    degrade,
    kept_scanlines,
    phantom_cine,
    stream_function_derivatives,
    stream_function_field,
    synthesize_doppler,
)
from .physics import c1_residual, c2_residual, huber, interior_residual_rms, smoothing_energy
from .pinn import ALPinnReconstructor, AlState, PinnProblem, RbState, RBPinnReconstructor, al_step, rb_step
from .pinn import MU4_DEFAULT

FULL_ITERS = 2500
ABLATION_ITERS = 500
ABLATION_GRID = (20, 50)
MAIN_GRID = (40, 100)


def _row(cid, required, measured, ok, module, **detail):
    return {
        "criterion_id": cid,
        "required": required,
        "measured": measured,
        "pass": bool(ok),
        "module": module,
        "detail": detail,
    }


class AcceptanceContext:
    """Lazily built fixtures shared between criteria."""

    def __init__(self, workdir=None):
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="dvfm-accept-")
            workdir = self._tmp.name
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)

    @cached_property
    def main_grid(self):
        return sector_grid(*MAIN_GRID)

    @cached_property
    def main_seg(self):
        return sector_segmentation(self.main_grid, 0)

    @cached_property
    def vortex_frame(self):
        truth = stream_function_field(StreamFunctionSpec.single_vortex(), self.main_grid, self.main_seg)
        return synthesize_doppler(truth, self.main_seg, self.main_grid, snr_db=math.inf)

    @cached_property
    def sparse_vortex_frame(self):
        return degrade(self.vortex_frame, DegradeSpec("sparse_deterministic", m=10, n=9))

    @cached_property
    def pretrained_path(self):
        """Weights fitted from random initialisation on a cine frame other than the test frame."""
        ref = phantom_cine(self.main_grid, self.main_seg, 10, snr_db=50.0, seed=0)[3]
        path = self.workdir / "pretrained_main.bin"
        with threadpool_limits(1):
            est = RBPinnReconstructor(n_iter=FULL_ITERS, random_state=0).fit(ref)
        save_weights(est.params_, path)
        return path

    @cached_property
    def pinn_full(self):
        init = load_weights(self.pretrained_path)
        out = {}
        for method in ("rb-pinn", "al-pinn"):
            out[method] = reconstruct(self.vortex_frame, method, n_iter=FULL_ITERS, init_weights=init, seed=0)
        return out

    def close(self):
        if self._tmp is not None:
            self._tmp.cleanup()


# -- A1: gradient check against an independent finite-difference oracle --------


def _a1_frame(seed):
    rng = np.random.default_rng(1000 + seed)
    grid = build_grid(5, 5, 0.04, 0.01, -0.3, 0.15)
    seg = sector_segmentation(grid, 1)
    spec = StreamFunctionSpec((StreamTerm(1e-3, 1, 1), StreamTerm(4e-4, 2, 1)))
    truth = stream_function_field(spec, grid, seg)
    frame = synthesize_doppler(truth, seg, grid, snr_db=10.0, seed=seed)
    w = np.where(seg.mask, rng.uniform(0.2, 1.0, grid.shape), 0.0)
    valid = seg.mask.copy()
    valid[1, 1] = False
    frame = replace(frame, weights=np.where(valid, w, 0.0), valid=valid, v_d=np.where(valid, frame.v_d, 0.0))
    wall = VelocityField(rng.normal(0, 2e-3, grid.shape), rng.normal(0, 2e-3, grid.shape))
    bc = extract_boundary(seg, grid, wall)
    return frame, bc


class _FdOracle:
    """Composite loss of the network, recomputed from scratch with plain numpy.

    Evaluates many parameter perturbations at once: a perturbation in layer
    ``l`` only needs the cached inputs of that layer and a forward sweep of
    the later layers, batched over perturbations.
    """

    def __init__(self, frame, bc, mu, mu4, lam1, lam2):
        grid, mask = frame.grid, frame.mask
        self.cells = np.argwhere(mask)
        n = len(self.cells)
        self.n = n
        i, j = self.cells[:, 0], self.cells[:, 1]
        self.r = grid.r0 + i * grid.dr
        th = grid.theta0 + j * grid.dtheta
        rows_in, cols_in = np.nonzero(mask.any(axis=1))[0], np.nonzero(mask.any(axis=0))[0]
        r_a, r_b = grid.r0 + rows_in[0] * grid.dr, grid.r0 + rows_in[-1] * grid.dr
        t_a, t_b = grid.theta0 + cols_in[0] * grid.dtheta, grid.theta0 + cols_in[-1] * grid.dtheta
        self.x = np.column_stack([2 * (self.r - r_a) / (r_b - r_a) - 1, 2 * (th - t_a) / (t_b - t_a) - 1])
        self.sr, self.st = 2 / (r_b - r_a), 2 / (t_b - t_a)
        vd = frame.v_d[i, j]
        val = frame.valid[i, j]
        self.scale = np.abs(vd[val]).max()
        self.data = np.nonzero(val)[0]
        self.vd = vd[val] / self.scale
        self.w = frame.weights[i, j][val]
        pos = {(a, b): k for k, (a, b) in enumerate(self.cells)}
        self.bc_rows = np.array([pos[tuple(ix)] for ix in bc.indices])
        self.nrm = bc.normals
        self.wall = bc.wall_velocity / self.scale
        cen = []
        for k, (a, b) in enumerate(self.cells):
            nb = [(a + di, b + dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]
            if all(p in pos for p in nb):
                cen.append([pos[p] for p in nb] + [k])
        self.centres = np.array(cen, dtype=int).reshape(-1, 10)
        self.dr, self.dt = grid.dr, grid.dtheta
        self.mu, self.mu4, self.lam1, self.lam2 = mu, mu4, lam1, lam2

    @staticmethod
    def _hub(x):
        ax = np.abs(x)
        return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)

    def losses(self, Z):
        """``Z`` has shape ``(K, 3n, 2)``: outputs, then d/dx_r and d/dx_theta rows."""
        n = self.n
        y = Z[:, :n]
        jr = Z[:, n : 2 * n]
        jt = Z[:, 2 * n :]
        vr, vt = y[..., 0], y[..., 1]
        l1 = (self.w * self._hub(vr[:, self.data] - self.vd)).sum(axis=1)
        c1 = self.r * jr[..., 0] * self.sr + vr + jt[..., 1] * self.st
        l2 = self._hub(c1).sum(axis=1)
        b = self.bc_rows
        c2 = (vr[:, b] - self.wall[:, 0]) * self.nrm[:, 0] + (vt[:, b] - self.wall[:, 1]) * self.nrm[:, 1]
        l3 = self._hub(c2).sum(axis=1)
        l4 = np.zeros(len(Z))
        for comp in (vr, vt):
            for row in self.centres:
                v = comp[:, row[:9]].reshape(-1, 3, 3)  # [di+1, dj+1]
                rc = self.r[row[9]]
                drr = (v[:, 2, 1] - 2 * v[:, 1, 1] + v[:, 0, 1]) / self.dr**2
                dtt = (v[:, 1, 2] - 2 * v[:, 1, 1] + v[:, 1, 0]) / self.dt**2
                drt = (v[:, 2, 2] - v[:, 2, 0] - v[:, 0, 2] + v[:, 0, 0]) / (4 * self.dr * self.dt)
                l4 += (rc**2 * drr) ** 2 + 2 * (rc * drt) ** 2 + dtt**2
        m = self.mu
        return m[0] * l1 + m[1] * l2 + m[2] * l3 + self.mu4 * l4 + c1 @ self.lam1 + c2 @ self.lam2

    def _layer_inputs(self, Ws, bs):
        n = self.n
        A = np.concatenate([self.x, np.tile([1.0, 0.0], (n, 1)), np.tile([0.0, 1.0], (n, 1))])
        inputs, pre = [], []
        for layer, (W, b) in enumerate(zip(Ws, bs)):
            Z = A @ W.T
            Z[:n] += b
            inputs.append(A)
            pre.append(Z)
            if layer < len(Ws) - 1:
                A = self._activate(Z[None])[0]
        return inputs, pre

    def _activate(self, Z):
        n = self.n
        a = np.tanh(Z[:, :n])
        s = 1 - a * a
        return np.concatenate([a, Z[:, n : 2 * n] * s, Z[:, 2 * n :] * s], axis=1)

    def _sweep(self, Z, layer, Ws, bs):
        n = self.n
        for nxt in range(layer + 1, len(Ws)):
            A = self._activate(Z)
            Z = A @ Ws[nxt].T
            Z[:, :n] += bs[nxt]
        return Z

    def gradient(self, Ws, bs, h=1e-4, chunk=512):
        inputs, pre = self._layer_inputs(Ws, bs)
        n = self.n
        grads = []
        for layer, (W, b) in enumerate(zip(Ws, bs)):
            fo, fi = W.shape
            A, Z0 = inputs[layer], pre[layer]
            # flat index k < fo*fi: weight (k // fi, k % fi); then biases
            total = fo * fi + fo
            g = np.empty(total)
            for s in range(0, total, chunk):
                ks = np.arange(s, min(total, s + chunk))
                out = np.zeros(len(ks))
                for sign in (1.0, -1.0):
                    Z = np.repeat(Z0[None], len(ks), axis=0)
                    wmask = ks < fo * fi
                    kw = ks[wmask]
                    rows = np.nonzero(wmask)[0]
                    Z[rows, :, kw // fi] += sign * h * A[:, kw % fi].T
                    kb = ks[~wmask] - fo * fi
                    rows_b = np.nonzero(~wmask)[0]
                    Z[rows_b, :n, kb] += sign * h
                    out += sign * self.losses(self._sweep(Z, layer, Ws, bs))
                g[ks - 0] = out / (2 * h)
            grads.append(g[: fo * fi])
            grads.append(g[fo * fi :])
        return np.concatenate(grads)


def criterion_a1(ctx=None, seeds=range(20), h=1e-4):
    worst = 0.0
    worst_seed = None
    start = time.perf_counter()
    for seed in seeds:
        rng = np.random.default_rng(seed)
        frame, bc = _a1_frame(seed)
        params = mlp_init(seed)
        params = params.copy(params.values + rng.normal(0, 0.05, params.size))
        problem = PinnProblem(frame, bc)
        mu = rng.uniform(0.5, 2.0, 3)
        mu4 = 1e-2
        lam1 = rng.normal(0, 0.5, problem.n_points)
        lam2 = rng.normal(0, 0.5, len(problem.bc_rows))
        weights, terms = problem.forward_losses(params.values, params)
        l1, l2, l3, l4, c1, c2 = terms
        total = l1 * mu[0] + l2 * mu[1] + l3 * mu[2] + l4 * mu4 + c1.dot(lam1) + c2.dot(lam2)
        total.backward()
        g_ad = np.concatenate([w.grad.ravel() for w in weights])

        oracle = _FdOracle(frame, bc, mu, mu4, lam1, lam2)
        split = params.split()
        g_fd = oracle.gradient(split[0::2], split[1::2], h=h)
        rel = np.abs(g_ad - g_fd) / np.maximum(np.abs(g_fd), 1e-4)
        if rel.max() > worst:
            worst, worst_seed = float(rel.max()), seed
    elapsed = time.perf_counter() - start
    return _row(
        "A1",
        "max rel. gradient error < 1e-4 (abs floor 1e-8) over 20 seeds, < 120 s",
        {"max_rel_error": worst, "runtime_s": elapsed},
        worst < 1e-4 and elapsed < 120,
        "autodiff/mlp/pinn",
        worst_seed=worst_seed,
        n_params=int(params.size),
    )


# -- A2: divergence-free phantom --------------------------------------------------


def criterion_a2(ctx=None):
    rng = np.random.default_rng(2)
    worst = 0.0
    specs = [
        StreamFunctionSpec.single_vortex(),
        StreamFunctionSpec((StreamTerm(1e-3, 1, 1), StreamTerm(-5e-4, 2, 3), StreamTerm(2e-4, 3, 2))),
    ]
    box = (0.02, 0.12, -0.6, 0.6)
    for spec in specs:
        r = rng.uniform(box[0], box[1], 2000)
        th = rng.uniform(box[2], box[3], 2000)
        d = stream_function_derivatives(spec, r, th, box)
        res = c1_residual(r, d["v_r"], d["dvr_dr"], d["dvtheta_dtheta"])
        scale = np.max(np.abs(d["v_r"])) + np.max(np.abs(r * d["dvr_dr"])) + np.max(np.abs(d["dvtheta_dtheta"]))
        worst = max(worst, float(np.max(np.abs(res)) / scale))

    ratios = []
    spec = specs[0]
    for n_r, n_t in ((20, 50), (40, 100)):
        coarse = sector_grid(n_r, n_t)
        fine = sector_grid(2 * (n_r - 1) + 1, 2 * (n_t - 1) + 1)
        e = []
        for g in (coarse, fine):
            seg = sector_segmentation(g, 0)
            e.append(interior_residual_rms(stream_function_field(spec, g, seg), g, seg))
        ratios.append(e[0] / e[1])
    ok = worst < 1e-12 and all(3.2 <= q <= 4.8 for q in ratios)
    return _row(
        "A2",
        "analytic C1 = 0 (rel. < 1e-12); FD residual ratio 4 +/- 20% under halving",
        {"analytic_rel_residual": worst, "convergence_ratios": ratios},
        ok,
        "phantom/physics",
    )


# -- A3: loss-function fidelity ---------------------------------------------------


def criterion_a3(ctx=None):
    checks = {}
    checks["huber(0)"] = huber(0.0) == 0.0
    checks["huber(0.5)"] = huber(0.5, 1.0) == 0.125
    checks["huber(2)"] = huber(2.0, 1.0) == 1.5
    checks["c1 (r,0)"] = c1_residual(2.0, 2.0, 1.0, 0.0) == 4.0
    checks["c1 (1/r,0)"] = c1_residual(2.0, 0.5, -0.25, 0.0) == 0.0
    checks["c1 (0,c)"] = c1_residual(0.7, 0.0, 0.0, 0.0) == 0.0
    checks["c2 v=v_w"] = c2_residual((0.3, -0.2), (0.3, -0.2), (0.6, 0.8)) == 0.0
    checks["c2 tangential"] = c2_residual((1.0, 0.0), (0.0, 0.0), (0.0, 1.0)) == 0.0
    checks["c2 normal"] = c2_residual((1.0, 0.0), (0.0, 0.0), (1.0, 0.0)) == 1.0
    g = build_grid(4, 4, 2.0, 1.0, 0.0, 0.1)
    seg = sector_segmentation(g, 0)
    small = Segmentation(np.pad(np.ones((3, 3), bool), ((0, 1), (0, 1))))
    R, _ = g.mesh()
    checks["smooth const"] = smoothing_energy(VelocityField(np.full(g.shape, 3.0), np.full(g.shape, -1.0)), g, seg) == 0.0
    I, J = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    aff = 0.3 * I - 1.7 * J + 0.2
    checks["smooth affine"] = abs(smoothing_energy(VelocityField(aff, -aff), g, seg)) < 1e-24
    e = smoothing_energy(VelocityField(R**2, np.zeros(g.shape)), g, small)
    checks["smooth r^2"] = abs(e - 324.0) <= 1e-12 * 324
    failed = [k for k, v in checks.items() if not v]
    return _row("A3", "all closed-form examples exact", {"n_checks": len(checks), "failed": failed}, not failed, "physics")


# -- A4: ReLoBRaLo algebra --------------------------------------------------------


def criterion_a4(ctx=None):
    state = RbState(rng=np.random.default_rng(4))
    worst = 0.0
    for _ in range(1000):
        state = rb_step(state, (2.5, 2.5, 2.5))
        worst = max(worst, float(np.max(np.abs(state.mu - 1.0))))
    # unequal constant losses: the softmax guard eps shifts the ratios by ~eps / L
    state = RbState(rng=np.random.default_rng(4))
    worst_guarded = 0.0
    for _ in range(1000):
        state = rb_step(state, (0.7, 3.0, 11.0))
        worst_guarded = max(worst_guarded, float(np.max(np.abs(state.mu - 1.0))))
    L = 0.37
    s = RbState(eps=0.0, rng=np.random.default_rng(0))
    s = rb_step(s, (L, L, L))
    s = rb_step(s, (L, L, L), rho=1.0)
    # isolate the look-back term: alpha = 0 leaves mu = mu_hat(i, i-1)
    s0 = replace(s, alpha=0.0)
    mu_hat = rb_step(s0, (2 * L, L, L), rho=1.0).mu
    e = np.exp([2.0, 1.0, 1.0])
    expected = 3 * e / e.sum()
    err = float(np.max(np.abs(mu_hat - expected)))
    ok = worst == 0.0 and worst_guarded < 1e-10 and err < 1e-12
    return _row(
        "A4",
        "constant losses keep mu == 1 for 1000 iterations; 3*softmax(2,1,1) to 1e-12",
        {"max_mu_deviation": worst, "max_mu_deviation_unequal": worst_guarded, "softmax_error": err, "mu_hat": mu_hat.tolist()},
        ok,
        "pinn",
    )


# -- A5: augmented-Lagrangian dynamics -------------------------------------------


def criterion_a5(ctx=None, n_iter=200):
    start = time.perf_counter()
    g = sector_grid(*ABLATION_GRID)
    seg = sector_segmentation(g, 0)
    frame = phantom_cine(g, seg, 10, snr_db=50.0, seed=5)[4]
    xs = []
    est = ALPinnReconstructor(n_iter=n_iter, random_state=0, callback=lambda it, x, e: xs.append(x.copy()))
    with threadpool_limits(1):
        est.fit(frame)
    mu = np.array([2.0] + est.mu_history_)
    monotone = bool(np.all(np.diff(mu) >= 0))

    # independent recomputation of C1 at every stage-1 iterate
    prob = est.problem_
    template = est.params_
    lam = np.zeros(prob.n_points)
    for x in xs:
        y, J = network(template.split(x), prob.inputs, jacobian=True)
        c1 = prob.r * (J.data[0, :, 0] * prob.d_r) + y.data[:, 0] + J.data[1, :, 1] * prob.d_theta
        lam = lam + est.eta_lambda * c1
    got = est.al_state_.lambda1
    err = float(np.max(np.abs(got - lam)))
    scale = float(np.max(np.abs(lam)))
    elapsed = time.perf_counter() - start
    ok = monotone and err <= 1e-12 * max(scale, 1e-300) and est.al_state_.mu >= 2.0 and elapsed < 60
    return _row(
        "A5",
        "mu non-decreasing from 2; lambda1 == eta * sum C1 over stage 1 (round-off); < 60 s",
        {"mu_final": float(est.al_state_.mu), "lambda_abs_err": err, "lambda_scale": scale, "runtime_s": elapsed},
        ok,
        "pinn",
        n_stage1=len(xs),
        mu_monotone=monotone,
    )


# -- A6: iVFM against a dense solve -----------------------------------------------


def criterion_a6(ctx=None):
    g = sector_grid(8, 10)
    seg = sector_segmentation(g, 1)
    spec = StreamFunctionSpec((StreamTerm(1e-3, 1, 1), StreamTerm(3e-4, 2, 1)))
    frame = synthesize_doppler(stream_function_field(spec, g, seg), seg, g, snr_db=20.0, seed=6)
    rng = np.random.default_rng(6)
    bc = extract_boundary(seg, g, VelocityField(rng.normal(0, 1e-3, g.shape), rng.normal(0, 1e-3, g.shape)))
    system = assemble_kkt(frame, bc, 1e-6)
    x, _, info = solve_kkt(system)
    K = system.kkt_matrix().toarray()
    dense = np.linalg.solve(K, system.kkt_rhs())[: system.h.shape[0]]
    diff = float(np.max(np.abs(x - dense)))
    res = info["constraint_residual"]
    return _row(
        "A6",
        "sparse vs dense max-abs < 1e-8; ||Ax-b||_inf < 1e-8",
        {"max_abs_diff": diff, "constraint_residual": res, "size": int(K.shape[0])},
        diff < 1e-8 and res < 1e-8,
        "ivfm",
    )


# -- A7: phantom reconstruction -------------------------------------------------


def criterion_a7(ctx):
    f = ctx.vortex_frame
    ref, mask = f.reference, f.mask
    iv, _, _ = ivfm_solve(f)
    r2v = squared_correlation(iv, ref, mask, "v_r")
    r2t = squared_correlation(iv, ref, mask, "v_theta")
    measured = {"ivfm": {"r2_vr": r2v, "r2_vtheta": r2t}}
    ok = r2v >= 0.99 and r2t >= 0.90
    for method, (field, diag) in ctx.pinn_full.items():
        s = frame_scores(field, ref, mask)
        s["wall_clock_s"] = diag["wall_clock_s"]
        measured[method] = s
        ok = ok and s["r2_vr"] >= 0.95 and diag["wall_clock_s"] <= 900
    return _row(
        "A7",
        "iVFM r2(v_r) >= 0.99, r2(v_theta) >= 0.90; RB/AL (pretrained, I=2500) r2(v_r) >= 0.95, <= 15 min each",
        measured,
        ok,
        "ivfm/pinn",
    )


# -- A8: sparse robustness -------------------------------------------------------


def criterion_a8(ctx):
    start = time.perf_counter()
    full, sparse = ctx.vortex_frame, ctx.sparse_vortex_frame
    ref, mask = full.reference, full.mask
    iv_full = frame_scores(ivfm_solve(full)[0], ref, mask)
    iv_sparse = frame_scores(ivfm_solve(sparse)[0], ref, mask)
    rb_full = frame_scores(ctx.pinn_full["rb-pinn"][0], ref, mask)
    init = load_weights(ctx.pretrained_path)
    field, _ = reconstruct(sparse, "rb-pinn", n_iter=FULL_ITERS, init_weights=init, seed=0)
    rb_sparse = frame_scores(field, ref, mask)
    elapsed = time.perf_counter() - start
    ok = (
        iv_sparse["r2_vr"] >= 0.80
        and rb_sparse["r2_vr"] >= 0.80
        and iv_sparse["nrmse_pct"] > iv_full["nrmse_pct"]
        and rb_sparse["nrmse_pct"] > rb_full["nrmse_pct"]
        and elapsed <= 1200
    )
    return _row(
        "A8",
        "m=10/n=9 masking: iVFM and RB r2(v_r) >= 0.80; nRMSE above full-data value; <= 20 min",
        {
            "valid_scanlines": int(sparse.valid.any(axis=0).sum()),
            "ivfm": {"full": iv_full, "sparse": iv_sparse},
            "rb-pinn": {"full": rb_full, "sparse": rb_sparse},
            "runtime_s": elapsed,
        },
        ok,
        "ivfm/pinn/phantom",
    )


# -- A9: ablation ordering ---------------------------------------------------------


def unweighted_objective(est):
    """``L1 + L2 + L3 + mu4 L4`` at the fitted parameters (shared yardstick across schedules)."""
    l1, l2, l3, l4 = est.loss_breakdown()
    return l1 + l2 + l3 + est.mu4 * l4


def criterion_a9(ctx, n_frames=10, n_iter=ABLATION_ITERS, seeds=range(5)):
    start = time.perf_counter()
    g = sector_grid(*ABLATION_GRID)
    seg = sector_segmentation(g, 0)
    frames = phantom_cine(g, seg, n_frames, snr_db=50.0, seed=9)
    with threadpool_limits(1):
        pre = RBPinnReconstructor(n_iter=n_iter, random_state=0).fit(frames[n_frames // 3]).params_
    rows = ablation(frames, pre, n_iter=n_iter, seed=0)
    by = {(r["pretrained"], r["dual_stage"]): r for r in rows}
    a, b, c = by[(True, True)]["nrmse_pct"], by[(True, False)]["nrmse_pct"], by[(False, False)]["nrmse_pct"]
    ordering = a <= b <= c

    dual, single = [], []
    t_dual, t_single = [], []
    frame = frames[0]
    with threadpool_limits(1):
        for s in seeds:
            d = RBPinnReconstructor(n_iter=n_iter, random_state=s).fit(frame)
            a1 = RBPinnReconstructor(n_iter=n_iter, random_state=s, dual_stage=False).fit(frame)
            dual.append(unweighted_objective(d))
            single.append(unweighted_objective(a1))
            t_dual.append(d.fit_time_)
            t_single.append(a1.fit_time_)
    md, ms = float(np.median(dual)), float(np.median(single))
    elapsed = time.perf_counter() - start
    ok = ordering and md <= ms and elapsed <= 2700
    return _row(
        "A9",
        "median nRMSE (pre+dual) <= (pre only) <= (neither); dual final loss <= AdamW-only (median of 5 seeds); <= 45 min",
        {
            "nrmse_pre_dual": a,
            "nrmse_pre_only": b,
            "nrmse_neither": c,
            "nrmse_dual_only": by[(False, True)]["nrmse_pct"],
            "median_loss_dual": md,
            "median_loss_single": ms,
            "loss_ratio_single_over_dual": ms / md if md > 0 else None,
            "median_time_ratio_dual_over_single": float(np.median(t_dual) / np.median(t_single)),
            "runtime_s": elapsed,
        },
        ok,
        "optim/pinn",
        rows=[{k: v for k, v in r.items() if k != "per_frame_nrmse"} for r in rows],
    )


# -- A10: metrics ------------------------------------------------------------------


def criterion_a10(ctx=None):
    rng = np.random.default_rng(10)
    shape = (12, 20)
    mask = np.ones(shape, bool)
    ref = VelocityField(rng.normal(size=shape), rng.normal(size=shape))
    checks = {}
    checks["r2 identity"] = abs(squared_correlation(ref, ref, mask) - 1) < 1e-15
    aff = VelocityField(2 * ref.v_r + 3, -0.5 * ref.v_theta + 1)
    checks["r2 affine"] = abs(squared_correlation(aff, ref, mask) - 1) < 1e-15
    checks["r2 affine theta"] = abs(squared_correlation(aff, ref, mask, "v_theta") - 1) < 1e-15
    noisy = VelocityField(ref.v_r + rng.normal(size=shape), ref.v_theta)
    base = squared_correlation(noisy, ref, mask)
    moved = VelocityField(-4.0 * noisy.v_r + 7.0, noisy.v_theta)
    checks["r2 affine invariance"] = abs(squared_correlation(moved, ref, mask) - base) < 1e-12
    checks["nrmse identity"] = nrmse(ref, ref, mask) == 0.0
    M = float(np.max(np.hypot(ref.v_r, ref.v_theta)))
    off = VelocityField(ref.v_r + 0.25, ref.v_theta)
    checks["nrmse offset"] = abs(nrmse(off, ref, mask) - 100 * 0.25 / M) < 1e-12
    uni = VelocityField(np.full(shape, 0.6), np.full(shape, 0.8))
    checks["nrmse zero est"] = abs(nrmse(VelocityField.zeros(shape), uni, mask) - 100.0) < 1e-12
    checks["robust [5]"] = aggregate_robust([5]) == (5.0, 0.0)
    med, sd = aggregate_robust([1, 2, 3, 4, 100])
    checks["robust hand"] = med == 3.0 and abs(sd - 1.4826) < 1e-15
    checks["robust equal"] = aggregate_robust([2.5] * 7) == (2.5, 0.0)
    failed = [k for k, v in checks.items() if not v]
    return _row("A10", "all metric identities exact", {"n_checks": len(checks), "failed": failed}, not failed, "metrics")


# -- A11: determinism and serialisation -----------------------------------------


def criterion_a11(ctx):
    work = ctx.workdir
    checks = {}
    p = mlp_init(11)
    p.meta = {"note": "round trip"}
    save_weights(p, work / "w.bin")
    q = load_weights(work / "w.bin")
    checks["weights bit-exact"] = q.values.tobytes() == p.values.tobytes()
    g = sector_grid(*ABLATION_GRID)
    seg = sector_segmentation(g, 1)
    frames = phantom_cine(g, seg, 3, snr_db=30.0, seed=11)
    f = degrade(frames[1], DegradeSpec("sparse_random", m=5, n=3, seed=2))
    vio.write_frame(f, work / "f.json")
    h = vio.read_frame(work / "f.json")
    checks["frame bit-exact"] = all(
        np.asarray(getattr(f, k)).tobytes() == np.asarray(getattr(h, k)).tobytes() for k in ("v_d", "weights", "valid")
    ) and h.reference.v_theta.tobytes() == f.reference.v_theta.tobytes() and h.provenance == f.provenance
    a = ivfm_solve(frames[0])[0]
    b = ivfm_solve(frames[0])[0]
    checks["ivfm repeat"] = a.v_r.tobytes() == b.v_r.tobytes() and a.v_theta.tobytes() == b.v_theta.tobytes()
    kw = dict(n_iter=20, seed=3)
    serial = reconstruct_many(frames[:2], "rb-pinn", 1, **kw)
    again = reconstruct_many(frames[:2], "rb-pinn", 1, **kw)
    parallel = reconstruct_many(frames[:2], "rb-pinn", 2, **kw)

    def same(x, y):
        return all(u[0].v_r.tobytes() == v[0].v_r.tobytes() and u[0].v_theta.tobytes() == v[0].v_theta.tobytes() for u, v in zip(x, y))

    checks["pinn repeat"] = same(serial, again)
    checks["pinn jobs=1 vs jobs=2"] = same(serial, parallel)
    failed = [k for k, v in checks.items() if not v]
    return _row("A11", "bit-exact round trips and reproducible solves", {"n_checks": len(checks), "failed": failed}, not failed, "io/mlp/experiments")


# -- A12: truncation harness ------------------------------------------------------


def criterion_a12(ctx, n_frames=10, levels=(20, 40, 50, 60, 70)):
    start = time.perf_counter()
    g, seg = ctx.main_grid, ctx.main_seg
    frames = phantom_cine(g, seg, n_frames, snr_db=50.0, seed=12)
    kept = [kept_scanlines(g.n_theta, DegradeSpec("truncate", pct=p)) for p in levels]
    nested = all(np.all(kept[k + 1] <= kept[k]) and kept[k + 1].sum() < kept[k].sum() for k in range(len(kept) - 1))
    region = common_region(frames, levels)
    medians = []
    for pct in levels:
        errs = []
        for f in frames:
            field = ivfm_solve(degrade(f, DegradeSpec("truncate", pct=pct)))[0]
            errs.append(nrmse(field, f.reference, region))
        medians.append(aggregate_robust(errs)[0])
    monotone = all(b >= a for a, b in zip(medians, medians[1:]))
    elapsed = time.perf_counter() - start
    return _row(
        "A12",
        "nested valid regions; median iVFM nRMSE (common region) non-decreasing in truncation; <= 10 min",
        {"levels": list(levels), "median_nrmse": medians, "valid_scanlines": [int(k.sum()) for k in kept], "runtime_s": elapsed},
        nested and monotone and elapsed <= 600,
        "phantom/experiments/ivfm",
        common_region_cells=int(region.sum()),
    )


CRITERIA = {
    "A1": criterion_a1,
    "A2": criterion_a2,
    "A3": criterion_a3,
    "A4": criterion_a4,
    "A5": criterion_a5,
    "A6": criterion_a6,
    "A7": criterion_a7,
    "A8": criterion_a8,
    "A9": criterion_a9,
    "A10": criterion_a10,
    "A11": criterion_a11,
    "A12": criterion_a12,
}


def _short(measured):
    return json.dumps(measured, default=float)[:160]


def format_row(row) -> str:
    status = "PASS" if row["pass"] else f"FAIL ({row['module']})"
    return f"{row['criterion_id']:>4} {status}: measured {_short(row['measured'])} | required {row['required']}"


def run_acceptance(only=None, report_path=None, ctx=None, echo=print):
    """Run criteria in order, print one line each, optionally write the JSON report."""
    ids = list(CRITERIA) if not only else [c.upper() for c in only]
    unknown = [c for c in ids if c not in CRITERIA]
    if unknown:
        raise ValueError(f"unknown criteria: {', '.join(unknown)}")
    own = ctx is None
    ctx = ctx or AcceptanceContext()
    rows = []
    try:
        for cid in ids:
            try:
                row = CRITERIA[cid](ctx)
            except Exception as exc:  # noqa: BLE001 - a crash is a failed criterion, not an aborted run
                row = _row(cid, "criterion runs", f"{type(exc).__name__}: {exc}", False, CRITERIA[cid].__module__)
            rows.append(row)
            if echo:
                echo(format_row(row))
    finally:
        if own:
            ctx.close()
    if report_path:
        Path(report_path).write_text(json.dumps(rows, indent=2, default=float))
    if echo:
        echo(f"{sum(r['pass'] for r in rows)}/{len(rows)} criteria passed")
    return rows
