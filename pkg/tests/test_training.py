import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import homogeneous_field, mixed_bc_field
from mfpinn.autodiff import BatchEvaluation, finite_difference_check, forward_with_input_jacobian
from mfpinn.network import build_hbc, constrained_eval, to_reference
from mfpinn.physics import loss_scaled, loss_unscaled, residuals
from mfpinn.sampling import sample
from mfpinn.training import (EIGEN_SCHEDULE, SOURCE_SCHEDULE, AdamState, HistoryRecord, ResidualObjective,
                             Schedule, SourceProblem, TrainHistory, TrainOptions, adam_step, lr_at,
                             make_network, predict, train_source)

SMALL = dict(widths=(8, 8), n_points=64, record_every=5)


@pytest.mark.parametrize("it, rate", [(0, 1e-3), (1999, 1e-3), (2000, 5e-5), (4000, 2.5e-6), (6000, 1e-6),
                                      (100000, 1e-6)])
def test_source_schedule(it, rate):
    assert lr_at(SOURCE_SCHEDULE, it) == pytest.approx(rate, rel=1e-12)


def test_eigen_schedule_and_floor():
    assert lr_at(EIGEN_SCHEDULE, 9999) == 2e-4
    assert lr_at(EIGEN_SCHEDULE, 10000) == pytest.approx(2e-5)
    assert lr_at(Schedule(1e-3, 0.05, 2000, floor=1e-6), 100000) == 1e-6
    with pytest.raises(ValueError):
        lr_at(SOURCE_SCHEDULE, -1)


@pytest.mark.parametrize("kw", [dict(eta0=0), dict(gamma=0), dict(gamma=1.5), dict(floor=0),
                                dict(milestone_every=0)])
def test_schedule_invariants(kw):
    with pytest.raises(ValueError):
        Schedule(**kw)


def test_adam_zero_gradient_fresh_state():
    theta = np.array([1.0, -2.0, 3.0])
    new, st_ = adam_step(theta, np.zeros(3), AdamState.zeros(3), 1e-2)
    assert np.array_equal(new, theta) and st_.t == 1


@pytest.mark.parametrize("g", [2.5, -0.3, 1e-3])
def test_adam_first_step_is_sign_step(g):
    new, st_ = adam_step(np.zeros(1), np.array([g]), AdamState.zeros(1), 0.1)
    assert new[0] == pytest.approx(-0.1 * g / (abs(g) + 1e-8), rel=1e-12)
    assert st_.m[0] == pytest.approx(0.1 * g) and st_.v[0] == pytest.approx(0.001 * g * g)


def test_adam_quadratic_converges():
    theta, state = np.zeros(1), AdamState.zeros(1)
    for _ in range(5000):
        theta, state = adam_step(theta, 2 * (theta - 3), state, 1e-2)
    assert abs(theta[0] - 3) < 1e-3


def test_adam_non_finite_gradient_leaves_state():
    state = AdamState.zeros(2)
    theta = np.ones(2)
    with pytest.raises(FloatingPointError):
        adam_step(theta, np.array([1.0, np.nan]), state, 1e-3)
    assert state.t == 0 and np.all(state.m == 0) and np.all(theta == 1)
    with pytest.raises(ValueError):
        adam_step(theta, np.ones(3), state, 1e-3)


@given(seed=st.integers(0, 10**6), steps=st.integers(1, 20))
def test_adam_second_moment_nonnegative(seed, steps):
    rng = np.random.default_rng(seed)
    theta, state = rng.normal(size=5), AdamState.zeros(5)
    for _ in range(steps):
        theta, state = adam_step(theta, rng.normal(size=5), state, 1e-3)
    assert np.all(state.v >= 0) and state.t == steps


def test_history_must_increase():
    h = TrainHistory()
    h.append(HistoryRecord(0, 1e-3, None, 0.0))
    with pytest.raises(ValueError):
        h.append(HistoryRecord(0, 1e-3, None, 0.0))


@pytest.mark.parametrize("scaled", [True, False])
@pytest.mark.parametrize("d, G", [(2, 1), (2, 2), (3, 2)])
def test_objective_gradient_matches_finite_differences(scaled, d, G):
    rng = np.random.default_rng(10 * d + G)
    fld = mixed_bc_field(d, G, rng)
    geo = fld.geometry
    opts = TrainOptions(widths=(6, 5), activation="tanh", seed=d + G)
    p = make_network(fld, opts)
    p = p.with_theta(p.theta + rng.normal(0, 0.3, p.theta.shape))
    X = sample(geo, 12, "random", 1).points
    coef = fld.coefficients(X)
    obj = ResidualObjective(build_hbc(geo), coef, X, coef.source, scaled)
    assert finite_difference_check(p, to_reference(obj.hbc, X), obj, n_sample=80) < 1e-6


@pytest.mark.parametrize("scaled", [True, False])
def test_objective_loss_is_physics_loss(scaled):
    fld = mixed_bc_field(2, 2, np.random.default_rng(0))
    geo = fld.geometry
    p = make_network(fld, TrainOptions(widths=(7,)))
    X = sample(geo, 50, "sobol").points
    coef = fld.coefficients(X)
    hbc = build_hbc(geo)
    obj = ResidualObjective(hbc, coef, X, coef.source, scaled)
    loss, cot = obj(forward_with_input_jacobian(p, to_reference(hbc, X)))
    rf, rb = residuals(constrained_eval(p, hbc, X), coef, coef.source)
    expect = loss_scaled(rf, rb, coef) if scaled else loss_unscaled(rf, rb)
    assert loss == expect.total
    assert isinstance(cot, BatchEvaluation)


def test_zero_iterations_returns_initial_params():
    fld = homogeneous_field(source=1.0)
    opts = TrainOptions(iterations=0, **SMALL)
    p, h = train_source(SourceProblem(fld), opts)
    assert np.array_equal(p.theta, make_network(fld, opts).theta)
    assert h.iterations == [0]


def test_record_cadence_and_final_record():
    fld = homogeneous_field(source=1.0)
    _, h = train_source(SourceProblem(fld), TrainOptions(iterations=12, **SMALL))
    assert h.iterations == [0, 5, 10, 12]
    assert all(np.isfinite(h.losses))


def test_training_deterministic():
    fld = mixed_bc_field(2, 2, np.random.default_rng(1))
    opts = TrainOptions(iterations=15, **SMALL)
    _, h1 = train_source(SourceProblem(fld), opts)
    _, h2 = train_source(SourceProblem(fld), opts)
    assert np.array_equal(h1.losses, h2.losses)


@pytest.mark.parametrize("scaled", [True, False])
def test_recorded_loss_equals_re_evaluation(scaled):
    fld = mixed_bc_field(2, 2, np.random.default_rng(2))
    geo = fld.geometry
    opts = TrainOptions(iterations=11, scaled=scaled, keep_snapshots=True, **SMALL)
    p, h = train_source(SourceProblem(fld), opts)
    X = sample(geo, opts.n_points, "sobol").points
    coef = fld.coefficients(X)
    for rec in h.records:
        rf, rb = residuals(predict(p.with_theta(rec.theta), geo, X), coef, coef.source)
        ref = loss_scaled(rf, rb, coef) if scaled else loss_unscaled(rf, rb)
        assert rec.loss.total == pytest.approx(ref.total, rel=1e-12)
        assert rec.loss.scaled == scaled


def test_scaled_and_unscaled_share_init_and_points():
    fld = mixed_bc_field(2, 2, np.random.default_rng(3))
    runs = {}
    for scaled in (True, False):
        opts = TrainOptions(iterations=3, scaled=scaled, keep_snapshots=True, **SMALL)
        runs[scaled] = train_source(SourceProblem(fld), opts)[1]
    assert np.array_equal(runs[True].records[0].theta, runs[False].records[0].theta)
    assert not np.array_equal(runs[True].records[-1].theta, runs[False].records[-1].theta)


def test_resampling_option_runs():
    fld = homogeneous_field(source=1.0)
    _, h = train_source(SourceProblem(fld), TrainOptions(iterations=6, resample=True, **SMALL))
    assert h.iterations == [0, 5, 6]


@pytest.mark.slow
def test_manufactured_solution_training():
    """phi = sin(pi x) sin(pi y) with D = 1, sigma_r = 1 on the unit square."""
    fld = homogeneous_field(D=1.0, sigma_r=1.0)
    geo = fld.geometry
    X = sample(geo, 2048, "sobol").points
    exact = np.sin(np.pi * X[:, 0]) * np.sin(np.pi * X[:, 1])
    S = ((2 * np.pi**2 + 1) * exact)[:, None]
    opts = TrainOptions(iterations=5000, widths=(32, 32, 32), activation="sin", n_points=2048, record_every=1000)
    p, h = train_source(SourceProblem(fld, S), opts, X=X)
    Xt = sample(geo, 4000, "random", 9).points
    et = np.sin(np.pi * Xt[:, 0]) * np.sin(np.pi * Xt[:, 1])
    err = np.linalg.norm(predict(p, geo, Xt).phi[:, 0] - et) / np.linalg.norm(et)
    assert err < 0.05
    assert h.losses[-1] < h.losses[0]
