"""Error metrics of a prediction against the reference grid solution."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    delta_keff_pcm: float | None
    rel_flux_error_pct: float
    rel_current_error_pct: float
    alpha: float = 1.0
    n_outer: int | None = None
    wall_time_s: float | None = None

    def __post_init__(self):
        for name in ("delta_keff_pcm", "rel_flux_error_pct", "rel_current_error_pct"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def delta_keff_pcm(k_pred: float, k_ref: float) -> float:
    return 1e5 * abs(k_pred - k_ref)


def eigen_alpha(phi_pred, phi_ref) -> float:
    """Least-squares scale <phi_ref, phi_pred> / <phi_pred, phi_pred>."""
    phi_pred = np.ravel(phi_pred)
    den = float(phi_pred @ phi_pred)
    if den == 0.0:
        raise ValueError("predicted flux is identically zero")
    return float(np.ravel(phi_ref) @ phi_pred) / den


def _rel_pct(pred, ref) -> float:
    nrm = np.linalg.norm(np.ravel(ref))
    if nrm == 0.0:
        raise ValueError("reference has zero norm")
    return float(100.0 * np.linalg.norm(np.ravel(pred) - np.ravel(ref)) / nrm)


def compute_metrics(phi_pred, p_pred, phi_ref, p_ref, kind: str, k_pred: float | None = None,
                    k_ref: float | None = None, n_outer: int | None = None,
                    wall_time_s: float | None = None) -> Metrics:
    """Relative flux/current errors in percent and the k error in pcm.

    For eigenvalue runs the prediction is first scaled by the single factor
    ``alpha`` that best matches the reference flux; the same factor is
    applied to the current.
    """
    phi_pred = np.asarray(phi_pred, float)
    p_pred = np.asarray(p_pred, float)
    if phi_pred.shape != np.shape(phi_ref) or p_pred.shape != np.shape(p_ref):
        raise ValueError("prediction and reference shapes differ")
    alpha = 1.0
    if kind == "eigen":
        alpha = eigen_alpha(phi_pred, phi_ref)
        phi_pred = alpha * phi_pred
        p_pred = alpha * p_pred
    elif kind != "source":
        raise ValueError(f"unknown kind {kind!r}")
    dk = None
    if k_pred is not None and k_ref is not None:
        dk = delta_keff_pcm(k_pred, k_ref)
    return Metrics(dk, _rel_pct(phi_pred, phi_ref), _rel_pct(p_pred, p_ref), alpha, n_outer, wall_time_s)
