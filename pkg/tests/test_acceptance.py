"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary
(section "acceptance criteria") and also on stdout.
"""
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, c5g7_materials, homogeneous_field, mixed_bc_field
from mfpinn.autodiff import Architecture, finite_difference_check, init_params, input_jacobian_fd_error
from mfpinn.bench import get_reference, load_config, shipped_configs, with_overrides
from mfpinn.bench.metrics import compute_metrics, delta_keff_pcm
from mfpinn.eigen import solve_eigen
from mfpinn.network import ConstrainedOutput, boundary_operator, build_hbc, constrained_eval, to_reference
from mfpinn.physics import (Geometry, MaterialField, check_assumptions, loss_scaled, loss_unscaled,
                            removal_matrix, residuals)
from mfpinn.refsolver import assemble, power_iteration
from mfpinn.sampling import sample
from mfpinn.training import ResidualObjective, SourceProblem, train_source

EXTENDED = os.environ.get("MFPINN_EXTENDED") == "1"


def report(number, title, ok, detail, t0):
    line = f"[{number}] {'PASS' if ok else 'FAIL'} {title}: {detail} ({time.perf_counter() - t0:.1f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    combos = [(a, d, G) for a in ("tanh", "sin") for d in (2, 3) for G in (1, 2)]
    worst_jac = worst_grad = 0.0
    for trial in range(20):
        act, d, G = combos[trial % len(combos)]
        widths = tuple(int(w) for w in rng.integers(2, 9, size=rng.integers(1, 4)))
        seed = int(rng.integers(0, 2**31))
        fld = mixed_bc_field(d, G, np.random.default_rng(seed))
        p = init_params(Architecture.for_groups(d, widths, G, act), seed)
        X = sample(fld.geometry, int(rng.integers(1, 17)), "random", seed).points
        hbc = build_hbc(fld.geometry)
        Xi = to_reference(hbc, X)
        coef = fld.coefficients(X)
        obj = ResidualObjective(hbc, coef, X, coef.source, scaled=True)
        worst_jac = max(worst_jac, input_jacobian_fd_error(p, Xi))
        worst_grad = max(worst_grad, finite_difference_check(p, Xi, obj, n_sample=60, seed=trial))
    ok = worst_jac < 1e-6 and worst_grad < 1e-6 and time.perf_counter() - t0 < 60
    report(1, "gradient correctness", ok,
           f"max rel err input Jacobian {worst_jac:.2e}, PBLS gradient {worst_grad:.2e} (tol 1e-6)", t0)


def test_2_norm_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    checked = 0
    for name, path in sorted(shipped_configs().items()):
        case = load_config(path)
        fld = case.field
        m, M = check_assumptions(case.materials).norm_bounds
        for _ in range(100):
            n = int(rng.integers(1, 200))
            X = sample(fld.geometry, n, "random", int(rng.integers(0, 2**31))).points
            coef = fld.coefficients(X)
            rf = rng.normal(size=(n, case.n_groups, fld.geometry.dim)) * rng.lognormal(0, 2)
            rb = rng.normal(size=(n, case.n_groups)) * rng.lognormal(0, 2)
            ul, sl = loss_unscaled(rf, rb).total, loss_scaled(rf, rb, coef).total
            checked += int(m * ul <= sl <= M * ul)
    total = 100 * len(shipped_configs())
    report(2, "norm equivalence", checked == total, f"{checked}/{total} fields satisfy m*UL <= SL <= M*UL", t0)


def test_3_reference_solver_analytic_oracle():
    t0 = time.perf_counter()
    L, D, sr, nsf = 10.0, 1.0, 0.15, 0.2
    k_exact = nsf / (sr + D * 2 * (np.pi / L) ** 2)
    fld = homogeneous_field(L=(L, L), D=D, sigma_r=sr, nu_sigma_f=nsf)
    ks = {n: power_iteration(assemble(fld.geometry, fld, (n, n))).keff for n in (32, 64, 128)}
    errs = [abs(ks[n] - k_exact) for n in (32, 64, 128)]
    orders = [np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])]
    rel = errs[2] / k_exact
    ok = rel < 1e-3 and all(1.8 <= o <= 2.2 for o in orders) and time.perf_counter() - t0 < 60
    report(3, "reference solver vs buckling formula", ok,
           f"k(128^2)={ks[128]:.8f} vs {k_exact:.8f}, rel err {rel:.2e}, orders {orders[0]:.3f}, {orders[1]:.3f}", t0)


@pytest.mark.slow
@pytest.mark.parametrize("name", ["sc5g7", "twigl2d", "twigl3d"])
def test_4_reference_keff_reproduction(name, ref_cache):
    t0 = time.perf_counter()
    case = load_config(shipped_configs()[name])
    ref = get_reference(case, ref_cache)
    lit = case.reference["keff"]
    dk = delta_keff_pcm(ref.keff, lit)
    grid = "x".join(map(str, case.reference["resolution"]))
    report(f"4 {name}", f"reference k_eff {name}", dk <= 200,
           f"k_ref={ref.keff:.5f} at {grid} vs {lit:.5f}, {dk:.1f} pcm (tol 200)", t0)


@pytest.mark.slow
def test_5_pbls_advantage_desk_scale(ref_cache):
    t0 = time.perf_counter()
    base = load_config(shipped_configs()["c5g7_source_desk"])
    assert base.network["widths"] == [32, 32, 32] and base.sampling["n_points"] == 2048
    assert base.sampling["method"] == "sobol" and base.network["activation"] == "sin"
    assert base.training["iterations"] == 10000
    ref = get_reference(base, ref_cache)
    Xt = ref.cell_centers()
    errors = {"scaled": [], "unscaled": []}
    for seed in (0, 1, 2):
        for loss in errors:
            case = with_overrides(base, loss=loss, seed=seed)
            params, _ = train_source(SourceProblem(case.field), case.train_options())
            out = constrained_eval(params, build_hbc(case.geometry), Xt)
            errors[loss].append(compute_metrics(out.phi, out.p, ref.phi, ref.p, "source").rel_flux_error_pct)
    med = {k: float(np.median(v)) for k, v in errors.items()}
    elapsed = time.perf_counter() - t0
    ok = med["scaled"] < med["unscaled"] and elapsed < 15 * 60
    detail = (f"median flux error scaled {med['scaled']:.2f}% vs unscaled {med['unscaled']:.2f}% "
              f"(seeds: {', '.join(f'{a:.2f}/{b:.2f}' for a, b in zip(errors['scaled'], errors['unscaled']))})")
    report(5, "PBLS advantage, desk scale", ok, detail, t0)


@pytest.mark.slow
def test_6_eigen_pipeline_desk_scale():
    t0 = time.perf_counter()
    case = load_config(shipped_configs()["homogeneous_eigen"])
    eig = case.eigen_options()
    assert case.network["widths"] == [32, 32, 32] and case.sampling["n_points"] == 2048
    assert eig.inner_iterations == 500 and eig.max_outer == 40
    L = case.geometry.extent[0]
    m = case.materials[0]
    k_exact = m.nu_sigma_f[0] / (m.sigma_r[0] + m.D[0] * 2 * (np.pi / L) ** 2)
    k, _, state, _ = solve_eigen(case.field, eig, case.train_options())
    dk = delta_keff_pcm(k, k_exact)
    elapsed = time.perf_counter() - t0
    ok = state.converged and dk < 500 and elapsed < 10 * 60
    report(6, "eigen pipeline, desk scale", ok,
           f"k={k:.6f} vs analytic {k_exact:.6f}, {dk:.1f} pcm (tol 500), converged={state.converged} "
           f"after {state.outer_index} outer", t0)


def test_7_manufactured_zero_loss():
    t0 = time.perf_counter()
    mats = c5g7_materials()
    bc = {f: "dirichlet" for f in ("xmin", "xmax", "ymin", "ymax")}
    worst = 0.0
    for mat in mats:
        geo = Geometry((0, 0), (2, 3), [((0, 0), (2, 3), mat.name)], bc)
        fld = MaterialField(geo, [mat])
        X = sample(geo, 4096, "sobol").points
        x, y = X.T
        amp = np.array([1.0, 0.3])
        s = np.sin(np.pi * x / 2) * np.sin(np.pi * y / 3)
        grad = np.stack([np.pi / 2 * np.cos(np.pi * x / 2) * np.sin(np.pi * y / 3),
                         np.pi / 3 * np.sin(np.pi * x / 2) * np.cos(np.pi * y / 3)], axis=-1)
        lap = -((np.pi / 2) ** 2 + (np.pi / 3) ** 2) * s
        phi = s[:, None] * amp
        g = grad[:, None, :] * amp[None, :, None]
        p = -mat.D[None, :, None] * g
        div = -mat.D[None, :] * lap[:, None] * amp
        S = div + phi @ removal_matrix(mat).T
        coef = fld.coefficients(X)
        rf, rb = residuals(ConstrainedOutput(phi, p, g, div), coef, S)
        worst = max(worst, loss_scaled(rf, rb, coef).total, loss_unscaled(rf, rb).total)
    report(7, "manufactured solution zero loss", worst <= 1e-20, f"max total loss {worst:.2e} (tol 1e-20)", t0)


def test_8_hbc_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for name, path in sorted(shipped_configs().items()):
        case = load_config(path)
        geo = case.geometry
        hbc = build_hbc(geo)
        p = init_params(Architecture.for_groups(geo.dim, (16, 16), case.n_groups, "sin"), int(rng.integers(1000)))
        p = p.with_theta(p.theta + rng.normal(0, 0.5, p.theta.shape))
        lo, hi = np.array(geo.domain_min), np.array(geo.domain_max)
        for axis in range(geo.dim):
            for side in (0, 1):
                X = lo + (hi - lo) * rng.random((1000, geo.dim))
                X[:, axis] = lo[axis] if side == 0 else hi[axis]
                out = constrained_eval(p, hbc, X)
                worst = max(worst, float(np.max(np.abs(boundary_operator(hbc, out, axis, side)))))
    report(8, "hard boundary conditions exact", worst <= 1e-12, f"max |boundary operator| {worst:.2e} (tol 1e-12)", t0)


@pytest.mark.extended
def test_9_extended_twigl2d(ref_cache):
    if not EXTENDED:
        ACCEPTANCE_LINES.append("[9] SKIP extended TWIGL-2D: overnight run, set MFPINN_EXTENDED=1")
        pytest.skip("overnight run; set MFPINN_EXTENDED=1")
    t0 = time.perf_counter()
    case = load_config(shipped_configs()["twigl2d"])
    ref = get_reference(case, ref_cache)
    Xt = ref.cell_centers()
    k, params, state, _ = solve_eigen(case.field, case.eigen_options(), case.train_options())
    out = constrained_eval(params, build_hbc(case.geometry), Xt)
    m = compute_metrics(out.phi, out.p, ref.phi, ref.p, "eigen", k_pred=k, k_ref=ref.keff)
    ok = m.delta_keff_pcm <= 50 and m.rel_flux_error_pct <= 0.5
    report(9, "extended TWIGL-2D (best effort)", ok,
           f"k={k:.5f}, {m.delta_keff_pcm:.1f} pcm, flux error {m.rel_flux_error_pct:.3f}%, "
           f"{state.outer_index} outer", t0)
