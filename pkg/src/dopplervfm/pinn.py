"""Physics-informed network reconstruction: loss assembly, ReLoBRaLo and augmented-Lagrangian solvers.

Network inputs are the cavity coordinates mapped to ``[-1, 1]``; outputs are
velocities divided by the frame's velocity scale (max ``|v_D|`` over valid
cavity cells). All losses are evaluated on these normalised velocities with
derivatives taken in physical ``(r [m], theta [rad])`` coordinates.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .domain import BoundaryConditionSet, extract_boundary
from .mlp import LAYER_SIZES, MlpParams, load_weights, mlp_init, network, save_weights
from .optim import AdamWConfig, DualStageConfig, LbfgsConfig, dual_stage_optimize, single_stage_optimize
from .phantom import DopplerFrame, VelocityField, cavity_box
from .physics import smoothing_operator
from .validation import check_boundary, check_frame

logger = logging.getLogger(__name__)

MU4_DEFAULT = 10**-7.5


@dataclass(frozen=True)
class PinnConfig:
    mu4: float = MU4_DEFAULT
    huber_beta: float = 1.0
    dual_stage: DualStageConfig = field(default_factory=DualStageConfig)
    init_weights: str | None = None

    def __post_init__(self):
        if self.mu4 < 0:
            raise ValueError("mu4 must be non-negative")
        if not self.huber_beta > 0:
            raise ValueError("huber_beta must be positive")


class PinnProblem:
    """Precomputed collocation geometry and data for one Doppler frame."""

    def __init__(self, frame: DopplerFrame, bc: BoundaryConditionSet, huber_beta=1.0):
        grid = frame.grid
        mask = frame.mask
        self.frame = frame
        self.grid = grid
        self.beta = huber_beta
        self.cells = np.argwhere(mask)
        n = len(self.cells)
        flat = self.cells[:, 0] * grid.n_theta + self.cells[:, 1]
        self.r = grid.r[self.cells[:, 0]]
        self.theta = grid.theta[self.cells[:, 1]]

        r_a, r_b, t_a, t_b = cavity_box(grid, frame.seg)
        # degenerate extents (one-cell cavities) keep a unit scale
        self.box = (r_a, r_b if r_b > r_a else r_a + 1.0, t_a, t_b if t_b > t_a else t_a + 1.0)
        self.inputs = self.normalise(self.r, self.theta)
        self.d_r = 2.0 / (self.box[1] - self.box[0])
        self.d_theta = 2.0 / (self.box[3] - self.box[2])

        valid = frame.valid[self.cells[:, 0], self.cells[:, 1]]
        v_d = frame.v_d[self.cells[:, 0], self.cells[:, 1]]
        vmax = float(np.max(np.abs(v_d[valid]))) if valid.any() else 0.0
        self.v_scale = vmax if vmax > 0 else 1.0
        self.data_rows = np.flatnonzero(valid)
        self.v_d = v_d[valid] / self.v_scale
        self.weights = frame.weights[self.cells[:, 0], self.cells[:, 1]][valid]

        lookup = np.full(grid.size, -1)
        lookup[flat] = np.arange(n)
        bc_flat = bc.indices[:, 0] * grid.n_theta + bc.indices[:, 1]
        self.bc_rows = lookup[bc_flat]
        if np.any(self.bc_rows < 0):
            raise ValueError("boundary samples must lie inside the cavity")
        self.normals = bc.normals
        self.wall = bc.wall_velocity / self.v_scale

        S, _ = smoothing_operator(grid, frame.seg)
        self.smooth = S[:, flat].tocsr()

    @property
    def n_points(self):
        return len(self.cells)

    def normalise(self, r, theta):
        r_a, r_b, t_a, t_b = self.box
        return np.column_stack([2 * (np.asarray(r) - r_a) / (r_b - r_a) - 1, 2 * (np.asarray(theta) - t_a) / (t_b - t_a) - 1])

    def evaluate(self, weights):
        """Network fields at the collocation points: ``(v_r, v_theta, dvr_dr, dvtheta_dtheta)``."""
        y, J = network(weights, self.inputs, jacobian=True)
        return y[:, 0], y[:, 1], J[0, :, 0] * self.d_r, J[1, :, 1] * self.d_theta

    def loss_terms(self, v_r, v_theta, dvr_dr, dvtheta_dtheta):
        """Loss tensors from fields at the collocation points (tensors or arrays).

        Returns ``(l1, l2, l3, l4, c1, c2)`` with ``c1``/``c2`` the raw residual tensors.
        """
        v_r, v_theta = ad.as_tensor(v_r), ad.as_tensor(v_theta)
        dvr_dr, dvtheta_dtheta = ad.as_tensor(dvr_dr), ad.as_tensor(dvtheta_dtheta)
        beta = self.beta
        l1 = ((v_r[self.data_rows] - self.v_d).huber(beta) * self.weights).sum()
        c1 = dvr_dr * self.r + v_r + dvtheta_dtheta
        l2 = c1.huber(beta).sum()
        rows = self.bc_rows
        c2 = (v_r[rows] - self.wall[:, 0]) * self.normals[:, 0] + (v_theta[rows] - self.wall[:, 1]) * self.normals[:, 1]
        l3 = c2.huber(beta).sum()
        s_r = ad.spmv(self.smooth, v_r)
        s_t = ad.spmv(self.smooth, v_theta)
        l4 = s_r.square().sum() + s_t.square().sum()
        return l1, l2, l3, l4, c1, c2

    def forward_losses(self, values, params_template: MlpParams):
        weights = params_template.tensors(values)
        terms = self.loss_terms(*self.evaluate(weights))
        return weights, terms

    def predict_points(self, values, params_template: MlpParams, r, theta):
        y = network(params_template.split(values), self.normalise(r, theta))
        return y.data * self.v_scale

    def predict_field(self, values, params_template: MlpParams) -> VelocityField:
        pred = self.predict_points(values, params_template, self.r, self.theta)
        v_r = np.zeros(self.grid.shape)
        v_t = np.zeros(self.grid.shape)
        v_r[self.cells[:, 0], self.cells[:, 1]] = pred[:, 0]
        v_t[self.cells[:, 0], self.cells[:, 1]] = pred[:, 1]
        return VelocityField(v_r, v_t)


def assemble_losses(params: MlpParams, frame: DopplerFrame, bc: BoundaryConditionSet, cfg: PinnConfig | None = None):
    """Differentiable ``(L1, L2, L3, L4)`` tensors for ``params`` on ``frame``."""
    cfg = cfg or PinnConfig()
    problem = PinnProblem(frame, bc, cfg.huber_beta)
    _, terms = problem.forward_losses(params.values, params)
    return terms[:4]


def _flat_grad(weights):
    return np.concatenate([(np.zeros(w.data.size) if w.grad is None else np.ravel(w.grad)) for w in weights])


# -- ReLoBRaLo --------------------------------------------------------------


def softmax(x):
    z = np.asarray(x, dtype=float)
    z = np.exp(z - z.max())
    return z / z.sum()


@dataclass(frozen=True)
class RbState:
    mu: np.ndarray = field(default_factory=lambda: np.ones(3))
    loss_first: np.ndarray | None = None
    loss_prev: np.ndarray | None = None
    alpha: float = 0.999
    rho_expectation: float = 0.999
    temperature: float = 1.0
    eps: float = 1e-12
    n_loss: int = 3
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), compare=False)

    def __post_init__(self):
        if self.n_loss != 3:
            raise ValueError("ReLoBRaLo here balances exactly three losses")
        if np.any(np.asarray(self.mu) <= 0):
            raise ValueError("loss weights must stay positive")


def relobralo_update(mu_prev, loss_first, loss_prev, loss_cur, rho, alpha, temperature, eps):
    """Weights from relative loss progress with random look-back and exponential memory."""
    n = len(loss_cur)
    loss_cur = np.asarray(loss_cur, dtype=float)
    mu_hat_prev = n * softmax(loss_cur / (temperature * np.asarray(loss_prev) + eps))
    mu_hat_first = n * softmax(loss_cur / (temperature * np.asarray(loss_first) + eps))
    return alpha * (rho * np.asarray(mu_prev) + (1 - rho) * mu_hat_first) + (1 - alpha) * mu_hat_prev


def rb_step(state: RbState, losses, rho=None) -> RbState:
    """Advance the loss weights with this iteration's ``(L1, L2, L3)``.

    The first call records the reference losses and keeps ``mu = 1``. ``rho``
    is drawn from the state's generator unless given.
    """
    losses = np.asarray(losses, dtype=float)
    if state.iteration == 0:
        return replace(state, mu=np.ones(state.n_loss), loss_first=losses.copy(), loss_prev=losses.copy(), iteration=1)
    if rho is None:
        rho = float(state.rng.random() < state.rho_expectation)
    mu = relobralo_update(
        state.mu, state.loss_first, state.loss_prev, losses, rho, state.alpha, state.temperature, state.eps
    )
    return replace(state, mu=mu, loss_prev=losses.copy(), iteration=state.iteration + 1)


# -- augmented Lagrangian -----------------------------------------------------


@dataclass(frozen=True)
class AlState:
    lambda1: np.ndarray
    lambda2: np.ndarray
    mu: float = 2.0
    eta_lambda: float = 1e-5
    eta_mu: float = 1e-5

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("penalty coefficient must be positive")

    @classmethod
    def initial(cls, n_interior, n_boundary, mu=2.0, eta_lambda=1e-5, eta_mu=1e-5) -> "AlState":
        return cls(np.zeros(n_interior), np.zeros(n_boundary), mu, eta_lambda, eta_mu)


def al_step(state: AlState, c1, c2, l2, l3) -> AlState:
    """Gradient ascent on the multipliers and the penalty coefficient."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    if c1.shape != state.lambda1.shape or c2.shape != state.lambda2.shape:
        raise ValueError("residual vectors do not match multiplier sizes")
    return replace(
        state,
        lambda1=state.lambda1 + state.eta_lambda * c1,
        lambda2=state.lambda2 + state.eta_lambda * c2,
        mu=state.mu + state.eta_mu * 0.5 * (float(l2) + float(l3)),
    )


# -- estimators -----------------------------------------------------------------


class _PinnReconstructor(BaseEstimator):
    """Shared fit/predict plumbing; subclasses define the weighted objective."""

    def _configs(self):
        adamw = AdamWConfig(lr=self.lr, weight_decay=self.weight_decay)
        lbfgs = LbfgsConfig(max_iter_per_step=self.lbfgs_max_iter, history_size=self.lbfgs_history)
        return adamw, lbfgs

    def _initial_params(self):
        init = self.init_weights
        if init is None:
            return mlp_init(self.random_state)
        if isinstance(init, MlpParams):
            return init.copy()
        return load_weights(init, LAYER_SIZES)

    def fit(self, frame: DopplerFrame, boundary: BoundaryConditionSet | None = None):
        frame = check_frame(frame)
        bc = extract_boundary(frame.seg, frame.grid) if boundary is None else check_boundary(boundary, frame)
        start = time.perf_counter()
        self.problem_ = PinnProblem(frame, bc, self.huber_beta)
        template = self._initial_params()
        self._template = template
        self._start(self.problem_, template)
        adamw, lbfgs = self._configs()
        cb = self.callback
        it = [0]

        def adapt_step(x):
            loss, g = self._adapt(x)
            if cb is not None:
                cb(it[0], x, self)
            it[0] += 1
            return loss, g

        if self.dual_stage:
            cfg = DualStageConfig(self.n_iter, self.stage_split, adamw, lbfgs)
            result = dual_stage_optimize(adapt_step, self._frozen, template.values, cfg)
        else:
            result = single_stage_optimize(adapt_step, template.values, self.n_iter, adamw)
        self.result_ = result
        self.params_ = template.copy(result.params)
        self.params_.meta = {
            "input_box": list(self.problem_.box),
            "velocity_scale": self.problem_.v_scale,
        }
        self.field_ = self.problem_.predict_field(result.params, template)
        self.fit_time_ = time.perf_counter() - start
        self.diagnostics_ = self._diagnostics()
        return self

    def predict(self, X=None):
        """Velocity field on the fitted grid, or ``(n, 2)`` velocities at physical ``(r, theta)`` rows of ``X``."""
        check_is_fitted(self, "params_")
        if X is None:
            return self.field_
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2 or not np.isfinite(X).all():
            raise ValueError("X must be a finite (n, 2) array of (r, theta)")
        return self.problem_.predict_points(self.params_.values, self._template, X[:, 0], X[:, 1])

    def loss_breakdown(self, values=None):
        check_is_fitted(self, "params_")
        values = self.params_.values if values is None else values
        _, terms = self.problem_.forward_losses(values, self._template)
        return tuple(float(t.data) for t in terms[:4])

    def save_weights(self, path):
        check_is_fitted(self, "params_")
        save_weights(self.params_, path)

    def _base_diagnostics(self):
        r = self.result_
        l1, l2, l3, l4 = self.loss_breakdown()
        return {
            "loss_history": [float(v) for v in r.history],
            "final_loss": float(r.loss),
            "stage1_loss": None if r.stage1_loss is None else float(r.stage1_loss),
            "n_adamw": int(r.n_first),
            "n_lbfgs": int(r.n_second),
            "n_evals": int(r.n_evals),
            "losses": {"l1": l1, "l2": l2, "l3": l3, "l4": l4},
            "velocity_scale": float(self.problem_.v_scale),
            "wall_clock_s": float(self.fit_time_),
        }


class RBPinnReconstructor(_PinnReconstructor):
    """Network reconstruction with ReLoBRaLo-balanced data, mass-conservation and wall losses."""

    def __init__(
        self,
        n_iter=2500,
        stage_split=0.9,
        dual_stage=True,
        lr=1e-5,
        weight_decay=1e-2,
        mu4=MU4_DEFAULT,
        huber_beta=1.0,
        alpha=0.999,
        rho_expectation=0.999,
        temperature=1.0,
        softmax_eps=1e-12,
        lbfgs_max_iter=10,
        lbfgs_history=10,
        init_weights=None,
        random_state=0,
        callback=None,
    ):
        self.n_iter = n_iter
        self.stage_split = stage_split
        self.dual_stage = dual_stage
        self.lr = lr
        self.weight_decay = weight_decay
        self.mu4 = mu4
        self.huber_beta = huber_beta
        self.alpha = alpha
        self.rho_expectation = rho_expectation
        self.temperature = temperature
        self.softmax_eps = softmax_eps
        self.lbfgs_max_iter = lbfgs_max_iter
        self.lbfgs_history = lbfgs_history
        self.init_weights = init_weights
        self.random_state = random_state
        self.callback = callback

    def _start(self, problem, template):
        self.rb_state_ = RbState(
            alpha=self.alpha,
            rho_expectation=self.rho_expectation,
            temperature=self.temperature,
            eps=self.softmax_eps,
            rng=np.random.default_rng(self.random_state),
        )
        self.mu_history_ = []

    def _total(self, terms, mu):
        l1, l2, l3, l4 = terms[:4]
        return l1 * mu[0] + l2 * mu[1] + l3 * mu[2] + l4 * self.mu4

    def _adapt(self, x):
        weights, terms = self.problem_.forward_losses(x, self._template)
        self.rb_state_ = rb_step(self.rb_state_, [float(t.data) for t in terms[:3]])
        self.mu_history_.append(self.rb_state_.mu.copy())
        total = self._total(terms, self.rb_state_.mu)
        total.backward()
        return float(total.data), _flat_grad(weights)

    def _frozen(self):
        mu = self.rb_state_.mu.copy()

        def closure(x):
            weights, terms = self.problem_.forward_losses(x, self._template)
            total = self._total(terms, mu)
            total.backward()
            return float(total.data), _flat_grad(weights)

        return closure

    def _diagnostics(self):
        d = self._base_diagnostics()
        d["method"] = "rb-pinn"
        d["mu"] = [float(v) for v in self.rb_state_.mu]
        d["mu4"] = float(self.mu4)
        return d


class ALPinnReconstructor(_PinnReconstructor):
    """Network reconstruction with multiplier and penalty terms for the two constraints."""

    def __init__(
        self,
        n_iter=2500,
        stage_split=0.9,
        dual_stage=True,
        lr=1e-5,
        weight_decay=1e-2,
        mu4=MU4_DEFAULT,
        huber_beta=1.0,
        mu_init=2.0,
        eta_lambda=1e-5,
        eta_mu=1e-5,
        lbfgs_max_iter=10,
        lbfgs_history=10,
        init_weights=None,
        random_state=0,
        callback=None,
    ):
        self.n_iter = n_iter
        self.stage_split = stage_split
        self.dual_stage = dual_stage
        self.lr = lr
        self.weight_decay = weight_decay
        self.mu4 = mu4
        self.huber_beta = huber_beta
        self.mu_init = mu_init
        self.eta_lambda = eta_lambda
        self.eta_mu = eta_mu
        self.lbfgs_max_iter = lbfgs_max_iter
        self.lbfgs_history = lbfgs_history
        self.init_weights = init_weights
        self.random_state = random_state
        self.callback = callback

    def _start(self, problem, template):
        self.al_state_ = AlState.initial(
            problem.n_points, len(problem.bc_rows), self.mu_init, self.eta_lambda, self.eta_mu
        )
        self.mu_history_ = []

    def _total(self, terms, state):
        l1, l2, l3, l4, c1, c2 = terms
        # multiplier terms use raw residuals, penalty terms the Huber losses
        return l1 + c1.dot(state.lambda1) + c2.dot(state.lambda2) + (l2 + l3) * (0.5 * state.mu) + l4 * self.mu4

    def _adapt(self, x):
        weights, terms = self.problem_.forward_losses(x, self._template)
        total = self._total(terms, self.al_state_)
        total.backward()
        _, l2, l3, _, c1, c2 = terms
        self.al_state_ = al_step(self.al_state_, c1.data, c2.data, l2.data, l3.data)
        self.mu_history_.append(self.al_state_.mu)
        return float(total.data), _flat_grad(weights)

    def _frozen(self):
        state = self.al_state_

        def closure(x):
            weights, terms = self.problem_.forward_losses(x, self._template)
            total = self._total(terms, state)
            total.backward()
            return float(total.data), _flat_grad(weights)

        return closure

    def _diagnostics(self):
        d = self._base_diagnostics()
        s = self.al_state_
        d["method"] = "al-pinn"
        d["mu"] = float(s.mu)
        d["lambda1"] = {"mean": float(np.mean(s.lambda1)), "abs_max": float(np.max(np.abs(s.lambda1)))}
        d["lambda2"] = {
            "mean": float(np.mean(s.lambda2)) if s.lambda2.size else 0.0,
            "abs_max": float(np.max(np.abs(s.lambda2))) if s.lambda2.size else 0.0,
        }
        d["mu4"] = float(self.mu4)
        return d


def rb_pinn_solve(frame, bc=None, **params):
    est = RBPinnReconstructor(**params).fit(frame, bc)
    return est.field_, est.diagnostics_


def al_pinn_solve(frame, bc=None, **params):
    est = ALPinnReconstructor(**params).fit(frame, bc)
    return est.field_, est.diagnostics_


def pretrain_reference(frame, path, bc=None, **params) -> MlpParams:
    """Fit the ReLoBRaLo solver from random initialisation and save the weights to ``path``."""
    params.setdefault("init_weights", None)
    est = RBPinnReconstructor(**params).fit(frame, bc)
    est.params_.meta["pretrain"] = {"n_iter": est.n_iter, "final_loss": est.result_.loss}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_weights(est.params_, path)
    return est.params_
