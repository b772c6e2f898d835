"""Run orchestration: cached reference solutions, training runs and their artifacts.

A run directory holds

* ``run.csv``      the training history, one row per recorded iteration;
* ``fields.csv``   reference and predicted fields at the reference cell centres;
* ``summary.json`` final metrics plus the fully resolved case (reloadable);
* ``*.pgm``        flux heatmaps with ``.minmax.txt`` sidecars.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from ..eigen import solve_eigen
from ..network import build_hbc, constrained_eval
from ..refsolver import GridSolution, assemble, power_iteration, solve_fixed_source
from ..training import SourceProblem, lr_at, train_source
from .config import BenchmarkCase, case_from_dict, case_to_dict, with_overrides
from .heatmap import export_heatmap
from .metrics import Metrics, compute_metrics, delta_keff_pcm

log = logging.getLogger(__name__)

RUN_COLUMNS = ("iter", "lr", "loss_total", "loss_balance", "loss_fluxlaw", "rel_flux_err_pct",
               "rel_current_err_pct", "keff", "delta_keff_pcm", "elapsed_s")
AXES = "xyz"


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def default_cache_dir() -> Path:
    return Path(os.environ.get("MFPINN_CACHE", Path.home() / ".cache" / "mfpinn"))


def reference_key(case: BenchmarkCase) -> str:
    """Content hash of everything the reference solution depends on."""
    d = case_to_dict(case)
    payload = dict(kind=d["kind"], geometry=d["geometry"],
                   materials=[{k: v for k, v in m.items() if k != "notes"} for m in d["materials"]],
                   resolution=d["reference"]["resolution"])
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]


def compute_reference(case: BenchmarkCase) -> GridSolution:
    asm = assemble(case.geometry, case.field, case.reference["resolution"])
    if case.kind == "eigen":
        return power_iteration(asm)
    return solve_fixed_source(asm)


def get_reference(case: BenchmarkCase, cache_dir=None) -> GridSolution:
    """Reference solution, loaded from the on-disk cache when available."""
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    path = cache / f"{case.name}-{reference_key(case)}.npz"
    if path.exists():
        z = np.load(path)
        keff = None if np.isnan(z["keff"]) else float(z["keff"])
        return GridSolution(tuple(int(n) for n in z["shape"]), z["h"], z["domain_min"], z["phi"], z["p"],
                            keff, float(z["residual"]), int(z["iterations"]))
    sol = compute_reference(case)
    cache.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, shape=np.array(sol.shape), h=sol.h, domain_min=sol.domain_min, phi=sol.phi, p=sol.p,
             keff=np.nan if sol.keff is None else sol.keff,
             residual=sol.residual, iterations=sol.iterations)
    os.replace(tmp, path)
    return sol


def _metrics_at(case, hbc, Xt, ref, params, k_pred=None) -> Metrics:
    out = constrained_eval(params, hbc, Xt, check_domain=False)
    return compute_metrics(out.phi, out.p, ref.phi, ref.p, case.kind, k_pred=k_pred, k_ref=ref.keff)


def _write_run_csv(path, history, case, k_ref):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_COLUMNS)
        for r in history.records:
            m = r.metrics
            k = m.get("keff")
            dk = delta_keff_pcm(k, k_ref) if (k is not None and k_ref is not None) else None
            w.writerow([r.iteration, _fmt(r.lr), _fmt(r.loss.total), _fmt(r.loss.balance_term),
                        _fmt(r.loss.flux_law_term), _fmt(m.get("rel_flux_err_pct")),
                        _fmt(m.get("rel_current_err_pct")), _fmt(k), _fmt(dk), _fmt(r.elapsed_s)])


def field_columns(G: int, d: int, with_pred: bool = True) -> list:
    cols = list(AXES[:d])
    for g in range(1, G + 1):
        cols += [f"phi_ref_{g}"] + ([f"phi_pred_{g}"] if with_pred else [])
        for a in AXES[:d]:
            cols += [f"p{a}_ref_{g}"] + ([f"p{a}_pred_{g}"] if with_pred else [])
    return cols


def write_fields(path, X, phi_ref, p_ref, phi_pred=None, p_pred=None):
    """Fields at the test points, 17 significant digits."""
    N, G = phi_ref.shape
    d = X.shape[1]
    with_pred = phi_pred is not None
    cols = [X[:, j] for j in range(d)]
    for g in range(G):
        cols += [phi_ref[:, g]] + ([phi_pred[:, g]] if with_pred else [])
        for j in range(d):
            cols += [p_ref[:, g, j]] + ([p_pred[:, g, j]] if with_pred else [])
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",",
               header=",".join(field_columns(G, d, with_pred)), comments="")


def read_fields(path):
    """Inverse of :func:`write_fields`: (X, phi_ref, p_ref, phi_pred, p_pred)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    col = {name: data[:, i] for i, name in enumerate(header)}
    d = sum(1 for a in AXES if a in col)
    G = sum(1 for name in header if name.startswith("phi_ref_"))
    X = np.column_stack([col[a] for a in AXES[:d]])
    phi_ref = np.column_stack([col[f"phi_ref_{g}"] for g in range(1, G + 1)])
    p_ref = np.stack([np.column_stack([col[f"p{a}_ref_{g}"] for a in AXES[:d]]) for g in range(1, G + 1)], axis=1)
    if "phi_pred_1" not in col:
        return X, phi_ref, p_ref, None, None
    phi_pred = np.column_stack([col[f"phi_pred_{g}"] for g in range(1, G + 1)])
    p_pred = np.stack([np.column_stack([col[f"p{a}_pred_{g}"] for a in AXES[:d]]) for g in range(1, G + 1)], axis=1)
    return X, phi_ref, p_ref, phi_pred, p_pred


def _image(sol: GridSolution, values):
    """Grid values arranged as an image: rows run from high y to low y."""
    grid = sol.field(values)
    if grid.ndim == 3:
        grid = grid[:, :, grid.shape[2] // 2]
    return grid.T[::-1]


def _heatmaps(out_dir: Path, ref: GridSolution, phi_pred=None, alpha=1.0):
    for g in range(ref.phi.shape[1]):
        export_heatmap(_image(ref, ref.phi[:, g]), out_dir / f"phi_ref_{g + 1}.pgm")
        if phi_pred is not None:
            export_heatmap(_image(ref, phi_pred[:, g]), out_dir / f"phi_pred_{g + 1}.pgm")
            export_heatmap(_image(ref, np.abs(alpha * phi_pred[:, g] - ref.phi[:, g])),
                           out_dir / f"phi_dev_{g + 1}.pgm")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _prepare(case, loss, out_dir):
    if loss is not None:
        case = with_overrides(case, loss=loss)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return case, out


def run_source(case: BenchmarkCase, out_dir, loss: str | None = None, cache_dir=None,
               heatmaps: bool = True) -> Metrics:
    """Train on a fixed-source case and write the run artifacts."""
    if case.kind != "source":
        raise ValueError(f"case {case.name!r} is an eigenvalue case")
    case, out = _prepare(case, loss, out_dir)
    ref = get_reference(case, cache_dir)
    Xt = ref.cell_centers()
    hbc = build_hbc(case.geometry)
    opts = case.train_options()

    def monitor(params):
        m = _metrics_at(case, hbc, Xt, ref, params)
        return {"rel_flux_err_pct": m.rel_flux_error_pct, "rel_current_err_pct": m.rel_current_error_pct}

    t0 = time.perf_counter()
    params, history = train_source(SourceProblem(case.field), opts, monitor=monitor)
    wall = time.perf_counter() - t0
    pred = constrained_eval(params, hbc, Xt, check_domain=False)
    metrics = compute_metrics(pred.phi, pred.p, ref.phi, ref.p, "source", wall_time_s=wall)
    _write_run_csv(out / "run.csv", history, case, None)
    write_fields(out / "fields.csv", Xt, ref.phi, ref.p, pred.phi, pred.p)
    if heatmaps:
        _heatmaps(out, ref, pred.phi)
    _write_json(out / "summary.json", dict(
        case=case_to_dict(case), kind="source", loss=case.training["loss"], metrics=metrics.to_dict(),
        iterations=opts.iterations, final_loss=float(history.records[-1].loss.total) if history.records else None,
        reference=dict(key=reference_key(case), resolution=list(ref.shape)),
    ))
    log.info("%s (%s): flux error %.4f%%, current error %.4f%%", case.name, case.training["loss"],
             metrics.rel_flux_error_pct, metrics.rel_current_error_pct)
    return metrics


def run_eigen(case: BenchmarkCase, out_dir, loss: str | None = None, cache_dir=None,
              heatmaps: bool = True) -> Metrics:
    """Inverse power iteration on an eigenvalue case; writes the run artifacts."""
    if case.kind != "eigen":
        raise ValueError(f"case {case.name!r} is a fixed-source case")
    case, out = _prepare(case, loss, out_dir)
    ref = get_reference(case, cache_dir)
    Xt = ref.cell_centers()
    hbc = build_hbc(case.geometry)
    opts = case.train_options()
    eig = case.eigen_options()

    def monitor(params):
        m = _metrics_at(case, hbc, Xt, ref, params)
        return {"rel_flux_err_pct": m.rel_flux_error_pct, "rel_current_err_pct": m.rel_current_error_pct}

    t0 = time.perf_counter()
    keff, params, state, history = solve_eigen(case.field, eig, opts, monitor=monitor)
    wall = time.perf_counter() - t0
    pred = constrained_eval(params, hbc, Xt, check_domain=False)
    metrics = compute_metrics(pred.phi, pred.p, ref.phi, ref.p, "eigen", k_pred=keff, k_ref=ref.keff,
                              n_outer=state.outer_index, wall_time_s=wall)
    _write_run_csv(out / "run.csv", history, case, ref.keff)
    write_fields(out / "fields.csv", Xt, ref.phi, ref.p, pred.phi, pred.p)
    if heatmaps:
        _heatmaps(out, ref, pred.phi, metrics.alpha)
    lit = case.reference.get("keff")
    _write_json(out / "summary.json", dict(
        case=case_to_dict(case), kind="eigen", loss=case.training["loss"], metrics=metrics.to_dict(),
        keff=keff, k_ref=ref.keff, k_literature=lit,
        delta_keff_literature_pcm=None if lit is None else delta_keff_pcm(keff, lit),
        converged=state.converged, nonconvergence=not state.converged, n_outer=state.outer_index,
        k_history=state.k_history, eps_phi=[float(e) if np.isfinite(e) else None for e in state.eps_phi],
        eps_k=state.eps_k, inner_iterations_total=state.outer_index * eig.inner_iterations,
        final_lr=lr_at(opts.schedule, state.outer_index * eig.inner_iterations),
        initial_source_fallback=state.initial_source_fallback,
        reference=dict(key=reference_key(case), resolution=list(ref.shape), keff=ref.keff,
                       iterations=ref.iterations),
    ))
    log.info("%s (%s): k=%.6f (ref %.6f), %d outer, flux error %.4f%%", case.name, case.training["loss"],
             keff, ref.keff, state.outer_index, metrics.rel_flux_error_pct)
    return metrics


def run_case(case: BenchmarkCase, out_dir, loss: str | None = None, cache_dir=None, heatmaps=True) -> Metrics:
    fn = run_eigen if case.kind == "eigen" else run_source
    return fn(case, out_dir, loss=loss, cache_dir=cache_dir, heatmaps=heatmaps)


def run_reference(case: BenchmarkCase, out_dir, cache_dir=None) -> GridSolution:
    """Solve (or load) the reference and write its fields, summary and heatmaps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = get_reference(case, cache_dir)
    write_fields(out / "fields.csv", ref.cell_centers(), ref.phi, ref.p)
    _heatmaps(out, ref)
    _write_json(out / "summary.json", dict(
        case=case_to_dict(case), kind=case.kind, keff=ref.keff, k_literature=case.reference.get("keff"),
        delta_keff_literature_pcm=(None if ref.keff is None or "keff" not in case.reference
                                   else delta_keff_pcm(ref.keff, case.reference["keff"])),
        reference=dict(key=reference_key(case), resolution=list(ref.shape), iterations=ref.iterations,
                       residual=ref.residual),
    ))
    return ref


def recompute_metrics(run_dir) -> Metrics:
    """Metrics recomputed from ``fields.csv`` and the k values in ``summary.json``."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    X, phi_ref, p_ref, phi_pred, p_pred = read_fields(run_dir / "fields.csv")
    if phi_pred is None:
        raise ValueError(f"{run_dir} holds a reference only")
    kind = summary["kind"]
    m = summary["metrics"]
    return compute_metrics(phi_pred, p_pred, phi_ref, p_ref, kind, k_pred=summary.get("keff"),
                           k_ref=summary.get("k_ref"), n_outer=m.get("n_outer"),
                           wall_time_s=m.get("wall_time_s"))


def load_summary_case(run_dir) -> BenchmarkCase:
    """The case echoed in a run's summary."""
    return case_from_dict(json.loads((Path(run_dir) / "summary.json").read_text())["case"])
