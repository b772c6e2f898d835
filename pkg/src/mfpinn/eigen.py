"""Inverse power iteration around the fixed-source trainer."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NetworkParams, forward_with_input_jacobian
from .network import build_hbc, constrained_eval, to_reference
from .physics import MaterialField, emission_from_fission, fission_source
from .sampling import sample
from .training import (EIGEN_SCHEDULE, HistoryRecord, ResidualObjective, TrainHistory, TrainOptions,
                       lr_at, make_network, run_adam)

log = logging.getLogger(__name__)


class DegenerateSourceError(ArithmeticError):
    pass


class EigenDivergenceError(RuntimeError):
    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


def update_keff(k: float, f_old, f_new) -> float:
    """k_{n+1} = k_n (f_new . f_new) / (f_new . f_old)."""
    f_old = np.asarray(f_old, float)
    f_new = np.asarray(f_new, float)
    num = float(f_new @ f_new)
    den = float(f_new @ f_old)
    if abs(den) < 1e-30 * num or num == 0.0:
        raise DegenerateSourceError(f"degenerate fission source (f_new.f_old = {den:.3e})")
    return k * (num / den)


def outer_residuals(phi_prev, phi_new, k_prev: float, k_new: float):
    """(relative flux change, relative k change) between outer iterations."""
    phi_prev = np.asarray(phi_prev, float)
    nrm = np.linalg.norm(phi_prev)
    if nrm == 0.0:
        raise ValueError("previous flux has zero norm")
    if k_prev <= 0:
        raise ValueError("previous k must be positive")
    return float(np.linalg.norm(np.asarray(phi_new) - phi_prev) / nrm), abs(k_new - k_prev) / k_prev


@dataclass
class EigenOptions:
    inner_iterations: int = 2000
    tol_phi: float = 1e-5
    tol_k: float = 1e-6
    max_outer: int = 300
    k0: float = 1.0
    reset_adam: bool = False
    k_bounds: tuple = (1e-3, 1e3)

    def __post_init__(self):
        if self.inner_iterations < 1 or self.tol_phi <= 0 or self.tol_k <= 0 or self.max_outer < 0 or self.k0 <= 0:
            raise ValueError(f"invalid eigen options {self}")


@dataclass
class EigenState:
    keff: float
    f_current: np.ndarray
    phi_current: np.ndarray
    outer_index: int = 0
    eps_phi: list = field(default_factory=list)
    eps_k: list = field(default_factory=list)
    k_history: list = field(default_factory=list)
    inner_loss_start: list = field(default_factory=list)
    inner_loss_end: list = field(default_factory=list)
    converged: bool = False
    initial_source_fallback: bool = False


def _flux_at(params, hbc, X):
    return constrained_eval(params, hbc, X, check_domain=False).phi


def solve_eigen(field_: MaterialField, eig: EigenOptions, options: TrainOptions,
                params: NetworkParams | None = None, X=None, monitor=None):
    """Algorithm: freeze S = chi f / k, train J steps, recompute f, update k, repeat.

    Returns (keff, params, EigenState, TrainHistory). Network parameters and,
    unless ``reset_adam``, the Adam moments persist across outer iterations;
    the learning-rate clock counts cumulative inner steps.
    """
    if not any(m.fissile for m in field_.materials):
        raise ValueError("eigenvalue problem needs a material with non-zero nu*Sigma_f")
    geom = field_.geometry
    hbc = build_hbc(geom)
    if X is None:
        X = sample(geom, options.n_points, options.sampler, options.seed).points
    Xi = to_reference(hbc, X)
    coef = field_.coefficients(X)
    params = make_network(field_, options) if params is None else params
    t0 = time.perf_counter()

    phi = _flux_at(params, hbc, X)
    f = fission_source(coef, phi)
    state = EigenState(keff=eig.k0, f_current=f, phi_current=phi, k_history=[eig.k0])
    if np.linalg.norm(f) < 1e-12:
        warnings.warn("initial fission source is degenerate; using a uniform source", RuntimeWarning)
        f = (coef.nu_sigma_f.sum(axis=1) > 0).astype(float)
        state.f_current = f
        state.initial_source_fallback = True

    def with_k(p):
        return {**(monitor(p) if monitor else {}), "keff": state.keff}

    history = TrainHistory()
    adam = None
    step = 0
    for n in range(eig.max_outer):
        S = emission_from_fission(coef, state.f_current / state.keff)
        objective = ResidualObjective(hbc, coef, X, S, options.scaled)
        if eig.reset_adam:
            adam = None
        start_loss = objective.breakdown(forward_with_input_jacobian(params, Xi)).total
        params, adam, history = run_adam(
            params, objective, Xi, eig.inner_iterations, options.schedule, state=adam, start=step,
            history=history, record_every=options.record_every,
            monitor=with_k,
            t0=t0, record_final=False,
        )
        step += eig.inner_iterations
        end_loss = objective.breakdown(forward_with_input_jacobian(params, Xi)).total
        phi_new = _flux_at(params, hbc, X)
        f_new = fission_source(coef, phi_new)
        k_new = update_keff(state.keff, state.f_current, f_new)
        try:
            eps_phi, eps_k = outer_residuals(state.phi_current, phi_new, state.keff, k_new)
        except ValueError:   # previous flux identically zero (degenerate start)
            eps_phi, eps_k = np.inf, abs(k_new - state.keff) / state.keff
        state.inner_loss_start.append(float(start_loss))
        state.inner_loss_end.append(float(end_loss))
        state.keff, state.f_current, state.phi_current = k_new, f_new, phi_new
        state.outer_index = n + 1
        state.eps_phi.append(eps_phi)
        state.eps_k.append(eps_k)
        state.k_history.append(k_new)
        log.info("outer %d: k=%.6f eps_phi=%.2e eps_k=%.2e loss=%.3e", n + 1, k_new, eps_phi, eps_k, end_loss)
        if not (np.isfinite(k_new) and eig.k_bounds[0] <= k_new <= eig.k_bounds[1]):
            history.aborted = f"outer {n + 1}: k={k_new} left {eig.k_bounds}"
            raise EigenDivergenceError(history.aborted, state)
        if eps_phi <= eig.tol_phi and eps_k <= eig.tol_k:
            state.converged = True
            break
    if eig.max_outer > 0:
        lb = objective.breakdown(forward_with_input_jacobian(params, Xi))
        history.append(HistoryRecord(step, lr_at(options.schedule, step), lb,
                                     time.perf_counter() - t0, with_k(params)))
    return state.keff, params, state, history


def default_eigen_options(**kw) -> TrainOptions:
    return TrainOptions(schedule=EIGEN_SCHEDULE, **kw)
