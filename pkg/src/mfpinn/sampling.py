"""Residual-point samplers and cell-centre test grids."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

MAX_SOBOL_DIM = 3


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    method: str
    seed: int | None = None


def _box(domain):
    """(lo, hi) arrays from a Geometry or a ``(lo, hi)`` pair."""
    if hasattr(domain, "domain_min"):
        lo, hi = domain.domain_min, domain.domain_max
    else:
        lo, hi = domain
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if lo.shape != hi.shape or np.any(hi - lo <= 0):
        raise ValueError(f"degenerate domain box {lo} .. {hi}")
    return lo, hi


def sample_random(domain, n: int, seed: int) -> SampleSet:
    """i.i.d. uniform points in the open box."""
    if n < 1:
        raise ValueError("need at least one point")
    lo, hi = _box(domain)
    rng = np.random.default_rng(seed)
    u = rng.random((n, len(lo)))
    while np.any(u == 0.0):
        bad = u == 0.0
        u[bad] = rng.random(int(bad.sum()))
    return SampleSet(lo + (hi - lo) * u, "random", seed)


def sobol_unit(n: int, d: int) -> np.ndarray:
    """Points 1..n of the unscrambled Sobol sequence (the origin is skipped)."""
    if d > MAX_SOBOL_DIM:
        raise ValueError(f"Sobol sampling supports at most {MAX_SOBOL_DIM} dimensions, got {d}")
    if n < 1:
        raise ValueError("need at least one point")
    eng = qmc.Sobol(d, scramble=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")   # balance-property warning for non powers of two
        pts = eng.random(n + 1)
    return pts[1:]


def sample_sobol(domain, n: int) -> SampleSet:
    lo, hi = _box(domain)
    return SampleSet(lo + (hi - lo) * sobol_unit(n, len(lo)), "sobol")


def sample(domain, n: int, method: str = "sobol", seed: int = 0) -> SampleSet:
    if method == "sobol":
        return sample_sobol(domain, n)
    if method == "random":
        return sample_random(domain, n, seed)
    raise ValueError(f"unknown sampler {method!r}")


def test_grid(domain, resolution) -> np.ndarray:
    """Cell centres of a uniform grid, x index fastest."""
    lo, hi = _box(domain)
    res = [int(r) for r in resolution]
    if len(res) != len(lo) or any(r < 1 for r in res):
        raise ValueError(f"bad resolution {resolution}")
    h = (hi - lo) / np.array(res)
    axes = [lo[j] + h[j] * (np.arange(r) + 0.5) for j, r in enumerate(res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel(order="F") for m in mesh], axis=1)


test_grid.__test__ = False
