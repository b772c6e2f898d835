"""Adam, the multi-step learning-rate schedule and the fixed-source training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import (Architecture, BatchEvaluation, NetworkParams, NonFiniteLossError,
                       forward_with_input_jacobian, init_params, loss_gradient)
from .network import (ConstrainedOutput, HbcSpec, apply_hbc, apply_hbc_vjp, build_hbc,
                      constrained_eval, hbc_coefficients, reference_scale, to_reference)
from .physics import (LossBreakdown, MaterialField, PointCoefficients, loss_scaled,
                      loss_unscaled, loss_weights, residuals)
from .sampling import sample

log = logging.getLogger(__name__)


class ResidualObjective:
    """Empirical mixed-form loss at fixed residual points, with its cotangent.

    Called on a network evaluation in reference coordinates; returns
    ``(loss, cotangent)`` as expected by :func:`mfpinn.autodiff.loss_gradient`.
    """

    def __init__(self, hbc: HbcSpec, coef: PointCoefficients, X, S, scaled: bool = True):
        self.hbc = hbc
        self.coef = coef
        self.X = np.asarray(X)
        self.S = np.asarray(S)
        self.scaled = scaled
        self.hcoef = hbc_coefficients(hbc, self.X)
        self.scale = reference_scale(hbc)
        self.n = len(self.X)
        self.w_bal, self.w_flux = loss_weights(coef, scaled)

    def state(self, ev_ref: BatchEvaluation) -> ConstrainedOutput:
        ev = BatchEvaluation(ev_ref.outputs, ev_ref.input_jacobians * self.scale)
        return apply_hbc(ev, self.hcoef)

    def breakdown(self, ev_ref: BatchEvaluation) -> LossBreakdown:
        r_flux, r_bal = residuals(self.state(ev_ref), self.coef, self.S)
        if self.scaled:
            return loss_scaled(r_flux, r_bal, self.coef, self.n)
        return loss_unscaled(r_flux, r_bal, self.n)

    def __call__(self, ev_ref: BatchEvaluation):
        r_flux, r_bal = residuals(self.state(ev_ref), self.coef, self.S)
        lb = loss_scaled(r_flux, r_bal, self.coef, self.n) if self.scaled else loss_unscaled(r_flux, r_bal, self.n)
        g_rbal = (2.0 / self.n) * self.w_bal * r_bal
        g_rflux = (2.0 / self.n) * self.w_flux[:, :, None] * r_flux
        g_state = ConstrainedOutput(
            phi=np.einsum("ng,ngh->nh", g_rbal, self.coef.T),
            p=g_rflux / self.coef.D[:, :, None],
            grad_phi=g_rflux,
            div_p=g_rbal,
        )
        N, G = r_bal.shape
        cot = apply_hbc_vjp(self.hcoef, g_state, N, G)
        cot = BatchEvaluation(cot.outputs, cot.input_jacobians * self.scale)
        self.last = lb
        return lb.total, cot


@dataclass(frozen=True)
class Schedule:
    eta0: float = 1e-3
    gamma: float = 0.05
    milestone_every: int = 2000
    floor: float = 1e-6

    def __post_init__(self):
        if not (self.eta0 > 0 and 0 < self.gamma <= 1 and self.floor > 0 and self.milestone_every > 0):
            raise ValueError(f"invalid schedule {self}")


SOURCE_SCHEDULE = Schedule(1e-3, 0.05, 2000)
EIGEN_SCHEDULE = Schedule(2e-4, 0.1, 10000)


def lr_at(schedule: Schedule, iteration: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return max(schedule.floor, schedule.eta0 * schedule.gamma ** (iteration // schedule.milestone_every))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, rate: float):
    """One bias-corrected Adam update; returns new (theta, state) without mutating inputs."""
    grad = np.asarray(grad)
    if grad.shape != theta.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient; parameters left untouched")
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    new = theta - rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


@dataclass
class TrainOptions:
    iterations: int = 10000
    widths: tuple = (64, 64, 64, 64, 64)
    activation: str = "sin"
    scaled: bool = True
    sampler: str = "sobol"
    n_points: int = 2048
    seed: int = 0
    schedule: Schedule = SOURCE_SCHEDULE
    record_every: int = 100
    resample: bool = False
    keep_snapshots: bool = False


@dataclass
class HistoryRecord:
    iteration: int
    lr: float
    loss: LossBreakdown
    elapsed_s: float
    metrics: dict = field(default_factory=dict)
    theta: np.ndarray | None = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    aborted: str | None = None

    def append(self, rec: HistoryRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("history iterations must increase")
        self.records.append(rec)

    @property
    def losses(self) -> np.ndarray:
        return np.array([float(r.loss.total) for r in self.records])

    @property
    def iterations(self) -> list:
        return [r.iteration for r in self.records]


def run_adam(params: NetworkParams, objective: ResidualObjective, Xi, n_steps: int, schedule: Schedule,
             state: AdamState | None = None, start: int = 0, history: TrainHistory | None = None,
             record_every: int = 100, monitor=None, t0: float | None = None, keep_snapshots=False,
             record_final: bool = True, refresh=None):
    """Run ``n_steps`` Adam steps on ``objective``; the schedule clock starts at ``start``.

    ``refresh(step) -> (objective, Xi)`` replaces the point set before a step
    (used for per-iteration resampling). Returns (params, state, history).
    """
    state = AdamState.zeros(params.arch.n_params) if state is None else state
    history = TrainHistory() if history is None else history
    t0 = time.perf_counter() if t0 is None else t0

    def record(it, theta, lb):
        metrics = monitor(params.with_theta(theta)) if monitor is not None else {}
        history.append(HistoryRecord(it, lr_at(schedule, it), lb, time.perf_counter() - t0, metrics,
                                     theta.copy() if keep_snapshots else None))

    theta = params.theta
    for j in range(n_steps):
        it = start + j
        if refresh is not None:
            objective, Xi = refresh(it)
        try:
            loss, grad = loss_gradient(params.with_theta(theta), Xi, objective)
        except NonFiniteLossError as exc:
            history.aborted = f"iteration {it}: {exc}"
            log.error(history.aborted)
            raise
        if j % record_every == 0:
            record(it, theta, objective.last)
        theta, state = adam_step(theta, grad, state, lr_at(schedule, it))
    if record_final and (not history.records or history.records[-1].iteration < start + n_steps):
        ev = forward_with_input_jacobian(params.with_theta(theta), Xi)
        lb = objective.breakdown(ev)
        if not np.isfinite(lb.total):
            history.aborted = f"iteration {start + n_steps}: non-finite loss"
            raise NonFiniteLossError(None)
        record(start + n_steps, theta, lb)
    return params.with_theta(theta), state, history


@dataclass
class SourceProblem:
    field: MaterialField
    source: np.ndarray | None = None   # per-point override (N, G); defaults to the material source

    @property
    def geometry(self):
        return self.field.geometry


def make_network(problem_field: MaterialField, options: TrainOptions) -> NetworkParams:
    geom = problem_field.geometry
    arch = Architecture.for_groups(geom.dim, options.widths, problem_field.n_groups, options.activation)
    return init_params(arch, options.seed)


def train_source(problem: SourceProblem, options: TrainOptions, params: NetworkParams | None = None,
                 X=None, monitor=None):
    """Train on the fixed-source problem; returns (params, history)."""
    geom = problem.geometry
    hbc = build_hbc(geom)
    if X is None:
        X = sample(geom, options.n_points, options.sampler, options.seed).points
    coef = problem.field.coefficients(X)
    S = coef.source if problem.source is None else problem.source
    objective = ResidualObjective(hbc, coef, X, S, options.scaled)
    params = make_network(problem.field, options) if params is None else params

    def resample(it):
        Xr = sample(geom, options.n_points, "random", options.seed + 1 + it).points
        c = problem.field.coefficients(Xr)
        return ResidualObjective(hbc, c, Xr, c.source, options.scaled), to_reference(hbc, Xr)

    refresh = resample if options.resample else None
    params, _, history = run_adam(params, objective, to_reference(hbc, X), options.iterations,
                                  options.schedule, record_every=options.record_every, monitor=monitor,
                                  keep_snapshots=options.keep_snapshots, refresh=refresh)
    return params, history


def predict(params: NetworkParams, geometry, X) -> ConstrainedOutput:
    return constrained_eval(params, build_hbc(geometry), X)
