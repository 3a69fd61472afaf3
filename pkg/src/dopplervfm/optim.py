"""AdamW, L-BFGS with a strong Wolfe line search, and the AdamW -> L-BFGS schedule.

Optimizers work on flat float64 parameter vectors. Objectives are callables
``closure(x) -> (loss, grad)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """Raised when an optimizer meets a non-finite loss or gradient."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n) -> "AdamWState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adamw_step(state: AdamWState, params: np.ndarray, grads: np.ndarray, cfg: AdamWConfig):
    """One AdamW update with bias correction and decoupled weight decay.

    Returns new ``(state, params)``; inputs are not modified.
    """
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("state, params and grads must share a shape")
    if not np.isfinite(grads).all():
        raise OptimizationError("non-finite gradient in AdamW step", state=state)
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads * grads
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    new = params * (1 - cfg.lr * cfg.weight_decay)
    new = new - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamWState(m, v, t), new


@dataclass(frozen=True)
class LbfgsConfig:
    max_iter_per_step: int = 10
    max_eval_per_step: int | None = None  # defaults to 1.25 * max_iter_per_step
    history_size: int = 10
    lr: float = 1.0
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    tol_grad: float = 1e-9
    tol_change: float = 1e-11
    max_ls: int = 25

    def __post_init__(self):
        if not (0 < self.wolfe_c1 < self.wolfe_c2 < 1):
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.max_iter_per_step < 1:
            raise ValueError("max_iter_per_step must be >= 1")

    @property
    def max_eval(self) -> int:
        if self.max_eval_per_step is not None:
            return self.max_eval_per_step
        return int(self.max_iter_per_step * 1.25)


def _cubic_interpolate(x1, f1, g1, x2, f2, g2, bounds=None):
    """Minimiser of the cubic through two points with slopes, clipped to ``bounds``."""
    lo, hi = bounds if bounds is not None else ((x1, x2) if x1 <= x2 else (x2, x1))
    d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2)
    d2_square = d1 * d1 - g1 * g2
    if d2_square >= 0:
        d2 = math.sqrt(d2_square)
        if x1 <= x2:
            pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2 * d2))
        else:
            pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2 * d2))
        if not math.isfinite(pos):
            return (lo + hi) / 2
        return min(max(pos, lo), hi)
    return (lo + hi) / 2


@dataclass
class LineSearchResult:
    step: float
    loss: float
    grad: np.ndarray
    n_evals: int
    satisfied: bool
    gtd0: float
    gtd: float


def strong_wolfe(closure, x, t, d, f, g, gtd, c1=1e-4, c2=0.9, tol_change=1e-9, max_ls=25):
    """Bracketing line search with cubic-interpolation zoom for the strong Wolfe conditions.

    Searches along ``d`` from ``x`` (loss ``f``, gradient ``g``, slope ``gtd < 0``)
    starting at step ``t``.
    """
    d_norm = float(np.max(np.abs(d)))

    def phi(step):
        loss, grad = closure(x + step * d)
        return float(loss), grad, float(grad @ d)

    f_new, g_new, gtd_new = phi(t)
    n_evals = 1
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f, g, gtd
    done = False
    ls_iter = 0
    while ls_iter < max_ls:
        if (not math.isfinite(f_new)) or f_new > f + c1 * t * gtd or (ls_iter > 1 and f_new >= f_prev):
            bracket = [t_prev, t]
            b_f = [f_prev, f_new]
            b_g = [g_prev, g_new]
            b_gtd = [gtd_prev, gtd_new]
            break
        if abs(gtd_new) <= -c2 * gtd:
            bracket, b_f, b_g, b_gtd = [t], [f_new], [g_new], [gtd_new]
            done = True
            break
        if gtd_new >= 0:
            bracket = [t_prev, t]
            b_f = [f_prev, f_new]
            b_g = [g_prev, g_new]
            b_gtd = [gtd_prev, gtd_new]
            break
        min_step = t + 0.01 * (t - t_prev)
        max_step = t * 10
        tmp = t
        t = _cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, bounds=(min_step, max_step))
        t_prev, f_prev, g_prev, gtd_prev = tmp, f_new, g_new, gtd_new
        f_new, g_new, gtd_new = phi(t)
        n_evals += 1
        ls_iter += 1
    else:
        bracket, b_f, b_g, b_gtd = [0.0, t], [f, f_new], [g, g_new], [gtd, gtd_new]

    insuf_progress = False
    low, high = (0, 1) if len(bracket) == 1 or b_f[0] <= b_f[-1] else (1, 0)
    while not done and ls_iter < max_ls:
        if abs(bracket[1] - bracket[0]) * d_norm < tol_change:
            break
        # a non-finite trial value has no usable slope; bisect instead
        if math.isfinite(b_f[0]) and math.isfinite(b_f[1]):
            t = _cubic_interpolate(bracket[0], b_f[0], b_gtd[0], bracket[1], b_f[1], b_gtd[1])
        else:
            t = 0.5 * (bracket[0] + bracket[1])
        hi_b, lo_b = max(bracket), min(bracket)
        eps = 0.1 * (hi_b - lo_b)
        if min(hi_b - t, t - lo_b) < eps:
            if insuf_progress or t >= hi_b or t <= lo_b:
                t = hi_b - eps if abs(t - hi_b) < abs(t - lo_b) else lo_b + eps
                insuf_progress = False
            else:
                insuf_progress = True
        else:
            insuf_progress = False
        f_new, g_new, gtd_new = phi(t)
        n_evals += 1
        ls_iter += 1
        if (not math.isfinite(f_new)) or f_new > f + c1 * t * gtd or f_new >= b_f[low]:
            bracket[high], b_f[high], b_g[high], b_gtd[high] = t, f_new, g_new, gtd_new
            low, high = (0, 1) if b_f[0] <= b_f[1] else (1, 0)
        else:
            if abs(gtd_new) <= -c2 * gtd:
                done = True
            elif gtd_new * (bracket[high] - bracket[low]) >= 0:
                bracket[high], b_f[high], b_g[high], b_gtd[high] = (
                    bracket[low], b_f[low], b_g[low], b_gtd[low])
            bracket[low], b_f[low], b_g[low], b_gtd[low] = t, f_new, g_new, gtd_new

    return LineSearchResult(bracket[low], b_f[low], b_g[low], n_evals, done, gtd, b_gtd[low])


@dataclass
class LbfgsState:
    dirs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    ro: list = field(default_factory=list)
    h_diag: float = 1.0
    d: np.ndarray | None = None
    t: float = 0.0
    prev_grad: np.ndarray | None = None
    n_iter: int = 0
    n_evals: int = 0
    line_searches: list = field(default_factory=list)


class LBFGS:
    """Limited-memory BFGS whose state persists across :meth:`step` calls.

    Each step runs at most ``max_iter_per_step`` iterations (and about
    ``1.25x`` as many objective evaluations), mirroring the usual
    closure-based L-BFGS step semantics.
    """

    def __init__(self, cfg: LbfgsConfig | None = None, record_line_searches=False):
        self.cfg = cfg or LbfgsConfig()
        self.state = LbfgsState()
        self.record = record_line_searches

    def _direction(self, g):
        st = self.state
        q = -g.copy()
        alphas = []
        for s, y, rho in zip(reversed(st.steps), reversed(st.dirs), reversed(st.ro)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        r = q * st.h_diag
        for (s, y, rho), a in zip(zip(st.steps, st.dirs, st.ro), reversed(alphas)):
            b = rho * (y @ r)
            r += s * (a - b)
        return r

    def step(self, closure, x):
        """Run one optimisation step from ``x``; returns ``(x_new, loss)``.

        The returned loss is never above the loss at ``x``.
        """
        cfg = self.cfg
        st = self.state
        loss, g = closure(x)
        loss = float(loss)
        if not math.isfinite(loss):
            raise OptimizationError("non-finite loss at L-BFGS entry")
        evals = 1
        st.n_evals += 1
        x0, loss0 = x, loss
        if np.max(np.abs(g)) <= cfg.tol_grad:
            return x, loss
        n_iter = 0
        while n_iter < cfg.max_iter_per_step:
            n_iter += 1
            st.n_iter += 1
            if st.n_iter == 1:
                d = -g
                st.dirs, st.steps, st.ro = [], [], []
                st.h_diag = 1.0
            else:
                y = g - st.prev_grad
                s = st.d * st.t
                ys = float(y @ s)
                if ys > 1e-10:
                    if len(st.dirs) == cfg.history_size:
                        st.dirs.pop(0)
                        st.steps.pop(0)
                        st.ro.pop(0)
                    st.dirs.append(y)
                    st.steps.append(s)
                    st.ro.append(1.0 / ys)
                    st.h_diag = ys / float(y @ y)
                d = self._direction(g)
            st.prev_grad = g.copy()
            prev_loss = loss
            t = min(1.0, 1.0 / float(np.sum(np.abs(g)))) * cfg.lr if st.n_iter == 1 else cfg.lr
            gtd = float(g @ d)
            if gtd > -cfg.tol_change:
                if n_iter == 1 and st.n_iter > 1:
                    # stale curvature produced a non-descent direction; restart
                    st.n_iter = 0
                break
            ls = strong_wolfe(closure, x, t, d, loss, g, gtd, cfg.wolfe_c1, cfg.wolfe_c2, max_ls=cfg.max_ls)
            evals += ls.n_evals
            st.n_evals += ls.n_evals
            if self.record:
                st.line_searches.append(ls)
            if not (ls.loss < loss or (ls.loss == loss and ls.step > 0)) or not math.isfinite(ls.loss):
                # line search failed to decrease; drop memory and stop this step
                st.n_iter = 0
                break
            t = ls.step
            st.d, st.t = d, t
            x = x + t * d
            loss, g = ls.loss, ls.grad
            if n_iter == cfg.max_iter_per_step or evals >= cfg.max_eval:
                break
            if np.max(np.abs(g)) <= cfg.tol_grad:
                break
            if np.max(np.abs(d * t)) <= cfg.tol_change:
                break
            if abs(loss - prev_loss) < cfg.tol_change:
                break
        if loss > loss0:
            return x0, loss0
        return x, loss


def lbfgs_minimize(closure, params, cfg: LbfgsConfig | None = None, n_steps=1, optimizer=None):
    """Run ``n_steps`` L-BFGS steps from ``params``; returns ``(params, loss, optimizer)``."""
    opt = optimizer or LBFGS(cfg)
    x = np.asarray(params, dtype=float)
    loss = None
    for _ in range(n_steps):
        x, loss = opt.step(closure, x)
    return x, loss, opt


@dataclass(frozen=True)
class DualStageConfig:
    total_iters: int = 2500
    stage_split: float = 0.9
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)

    def __post_init__(self):
        if not (0 < self.stage_split < 1):
            raise ValueError("stage_split must lie strictly between 0 and 1")
        if self.total_iters < 2:
            raise ValueError("total_iters must be >= 2")

    @property
    def n_first(self) -> int:
        return int(math.floor(self.stage_split * self.total_iters))

    @property
    def n_second(self) -> int:
        return self.total_iters - self.n_first


@dataclass
class OptimizeResult:
    params: np.ndarray
    loss: float
    history: list
    stage: list
    n_evals: int
    n_first: int
    n_second: int
    stage1_loss: float | None = None


class CountingObjective:
    """Wraps an objective and counts evaluations."""

    def __init__(self, fn):
        self.fn = fn
        self.count = 0

    def __call__(self, x):
        self.count += 1
        return self.fn(x)


def single_stage_optimize(adapt_step, params, n_iter, cfg: AdamWConfig) -> OptimizeResult:
    """``n_iter`` AdamW iterations; ``adapt_step(x) -> (loss, grad)`` may adapt loss weights."""
    x = np.array(params, dtype=float)
    state = AdamWState.zeros(x.size)
    history = []
    loss = float("nan")
    for _ in range(n_iter):
        loss, g = adapt_step(x)
        loss = float(loss)
        if not math.isfinite(loss):
            raise OptimizationError("non-finite loss during AdamW stage", state=state)
        history.append(loss)
        state, x = adamw_step(state, x, g, cfg)
    return OptimizeResult(x, loss, history, ["adamw"] * len(history), n_iter, n_iter, 0, loss)


def dual_stage_optimize(adapt_step, frozen_objective, params, cfg: DualStageConfig) -> OptimizeResult:
    """AdamW on the adaptive objective, then L-BFGS steps on the frozen one.

    ``adapt_step(x)`` returns ``(loss, grad)`` and may update loss weights as a
    side effect; ``frozen_objective()`` is called once after the first stage and
    must return a deterministic closure with the weights fixed.
    """
    first = single_stage_optimize(adapt_step, params, cfg.n_first, cfg.adamw)
    x = first.params
    closure = CountingObjective(frozen_objective())
    stage1_loss, _ = closure(x)
    stage1_loss = float(stage1_loss)
    history = list(first.history)
    stages = list(first.stage)
    opt = LBFGS(cfg.lbfgs)
    loss = stage1_loss
    for k in range(cfg.n_second):
        x, loss = opt.step(closure, x)
        history.append(float(loss))
        stages.append("lbfgs")
    logger.debug("dual stage: stage-1 loss %.6g -> final %.6g", stage1_loss, loss)
    return OptimizeResult(
        params=x,
        loss=float(loss),
        history=history,
        stage=stages,
        n_evals=first.n_evals + closure.count,
        n_first=cfg.n_first,
        n_second=cfg.n_second,
        stage1_loss=stage1_loss,
    )
