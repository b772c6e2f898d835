"""Hard boundary conditions: the raw FCNN output mapped to (p, phi) satisfying the BCs exactly.

Raw output ordering is group-major: ``[p^1_x .. p^1_d, phi^1, p^2_x, ..]``.
Points are first mapped affinely to the reference box [-1, 1]^d before
entering the network.

Per group the transform is

    phi~   = L(x) phi_raw
    p~_j   = Lp_j(x_j) p_raw_j + c_j(x_j) phi~

``L`` multiplies the normalised distance factors of the Dirichlet faces;
``Lp_j`` those of the Neumann and Robin faces normal to axis j, and ``c_j``
blends in +-phi~/2 with a weight that is 1 on a Robin face and 0 on the
opposite face, so that -p.n + phi/2 = 0 holds on Robin faces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import BatchEvaluation, NetworkParams, forward_with_input_jacobian
from .physics import FACES, Geometry


class HbcError(ValueError):
    pass


@dataclass(frozen=True)
class HbcSpec:
    domain_min: np.ndarray
    domain_max: np.ndarray
    kinds: tuple            # per axis, (low face kind, high face kind)

    @property
    def dim(self) -> int:
        return len(self.kinds)

    def describe(self) -> dict:
        """Which faces enter which factor, per axis."""
        out = {}
        for j, (lo, hi) in enumerate(self.kinds):
            out[j] = dict(
                phi=[s for s, k in (("low", lo), ("high", hi)) if k == "dirichlet"],
                current=[s for s, k in (("low", lo), ("high", hi)) if k in ("neumann", "robin")],
                robin=[s for s, k in (("low", lo), ("high", hi)) if k == "robin"],
            )
        return out


def build_hbc(geometry) -> HbcSpec:
    if not isinstance(geometry, Geometry):
        raise HbcError("hard boundary conditions need an axis-aligned box Geometry")
    kinds = tuple((geometry.boundary[FACES[2 * j]], geometry.boundary[FACES[2 * j + 1]])
                  for j in range(geometry.dim))
    return HbcSpec(np.array(geometry.domain_min), np.array(geometry.domain_max), kinds)


def _factor(t, a, b, low: bool, high: bool):
    """Distance factor vanishing on the selected ends of [a, b], max 1, and its derivative."""
    L = b - a
    if low and high:
        s = (L / 2) ** 2
        return (t - a) * (b - t) / s, (a + b - 2 * t) / s
    if low:
        return (t - a) / L, np.full_like(t, 1 / L)
    if high:
        return (b - t) / L, np.full_like(t, -1 / L)
    return np.ones_like(t), np.zeros_like(t)


@dataclass(frozen=True)
class HbcCoefficients:
    """The x-dependent coefficients of the transform evaluated at a batch."""

    L: np.ndarray        # (N,)
    dL: np.ndarray       # (N, d)
    Lp: np.ndarray       # (N, d)
    dLp: np.ndarray      # (N, d), d Lp_j / d x_j
    c: np.ndarray        # (N, d)
    dc: np.ndarray       # (N, d), d c_j / d x_j


def hbc_coefficients(hbc: HbcSpec, X) -> HbcCoefficients:
    X = np.asarray(X)
    N, d = X.shape
    dtype = X.dtype
    L = np.ones(N, dtype=dtype)
    fac, dfac = [], []
    Lp = np.empty((N, d), dtype=dtype)
    dLp = np.empty((N, d), dtype=dtype)
    c = np.zeros((N, d), dtype=dtype)
    dc = np.zeros((N, d), dtype=dtype)
    for j, (klo, khi) in enumerate(hbc.kinds):
        a, b = hbc.domain_min[j], hbc.domain_max[j]
        t = X[:, j]
        f, df = _factor(t, a, b, klo == "dirichlet", khi == "dirichlet")
        fac.append(f)
        dfac.append(df)
        L = L * f
        Lp[:, j], dLp[:, j] = _factor(t, a, b, klo != "dirichlet", khi != "dirichlet")
        length = b - a
        if klo == "robin":   # n = -e_j: p_j = -phi/2 on the face
            c[:, j] -= 0.5 * (b - t) / length
            dc[:, j] += 0.5 / length
        if khi == "robin":   # n = +e_j: p_j = +phi/2 on the face
            c[:, j] += 0.5 * (t - a) / length
            dc[:, j] += 0.5 / length
    dL = np.empty((N, d), dtype=dtype)
    for j in range(d):
        others = np.ones(N, dtype=dtype)
        for k in range(d):
            if k != j:
                others = others * fac[k]
        dL[:, j] = dfac[j] * others
    return HbcCoefficients(L, dL, Lp, dLp, c, dc)


@dataclass(frozen=True)
class ConstrainedOutput:
    phi: np.ndarray        # (N, G)
    p: np.ndarray          # (N, G, d)
    grad_phi: np.ndarray   # (N, G, d)
    div_p: np.ndarray      # (N, G)


def _split(ev: BatchEvaluation, d: int):
    N, K = ev.outputs.shape
    G = K // (d + 1)
    out = ev.outputs.reshape(N, G, d + 1)
    jac = ev.input_jacobians.reshape(N, G, d + 1, d)
    return out[:, :, :d], out[:, :, d], jac[:, :, :d, :], jac[:, :, d, :]


def reference_scale(hbc: HbcSpec) -> np.ndarray:
    """d xi / d x of the affine map onto [-1, 1]^d."""
    return 2.0 / (hbc.domain_max - hbc.domain_min)


def to_reference(hbc: HbcSpec, X) -> np.ndarray:
    return (np.asarray(X) - hbc.domain_min) * reference_scale(hbc) - 1.0


def physical_evaluation(params: NetworkParams, hbc: HbcSpec, X) -> BatchEvaluation:
    """Raw network outputs with Jacobians taken with respect to physical x."""
    ev = forward_with_input_jacobian(params, to_reference(hbc, X))
    return BatchEvaluation(ev.outputs, ev.input_jacobians * reference_scale(hbc))


def apply_hbc(ev: BatchEvaluation, coef: HbcCoefficients) -> ConstrainedOutput:
    d = coef.Lp.shape[1]
    p_raw, phi_raw, dp_raw, dphi_raw = _split(ev, d)
    L = coef.L[:, None]
    phi = L * phi_raw
    grad_phi = coef.dL[:, None, :] * phi_raw[:, :, None] + L[:, :, None] * dphi_raw
    Lp, c = coef.Lp[:, None, :], coef.c[:, None, :]
    p = Lp * p_raw + c * phi[:, :, None]
    dpjj = np.diagonal(dp_raw, axis1=2, axis2=3)       # (N, G, d): d p_raw_j / d x_j
    div_terms = (coef.dLp[:, None, :] * p_raw + Lp * dpjj
                 + coef.dc[:, None, :] * phi[:, :, None] + c * grad_phi)
    return ConstrainedOutput(phi=phi, p=p, grad_phi=grad_phi, div_p=div_terms.sum(axis=2))


def apply_hbc_vjp(coef: HbcCoefficients, g: ConstrainedOutput, n_points: int, n_groups: int) -> BatchEvaluation:
    """Pull cotangents of (phi, p, grad_phi, div_p) back to the raw outputs and Jacobians."""
    N, G = n_points, n_groups
    d = coef.Lp.shape[1]
    Lp, c = coef.Lp[:, None, :], coef.c[:, None, :]
    gdiv = g.div_p[:, :, None]
    g_p_raw = g.p * Lp + gdiv * coef.dLp[:, None, :]
    g_dpjj = gdiv * Lp
    g_phi = g.phi + np.sum(g.p * c, axis=2) + g.div_p * np.sum(coef.dc, axis=1)[:, None]
    g_grad = g.grad_phi + gdiv * c
    L = coef.L[:, None]
    g_phi_raw = g_phi * L + np.einsum("ngd,nd->ng", g_grad, coef.dL)
    g_dphi_raw = g_grad * L[:, :, None]

    dtype = np.result_type(g_p_raw, g_phi_raw)
    out = np.zeros((N, G, d + 1), dtype=dtype)
    out[:, :, :d] = g_p_raw
    out[:, :, d] = g_phi_raw
    jac = np.zeros((N, G, d + 1, d), dtype=dtype)
    for j in range(d):
        jac[:, :, j, j] = g_dpjj[:, :, j]
    jac[:, :, d, :] = g_dphi_raw
    return BatchEvaluation(out.reshape(N, G * (d + 1)), jac.reshape(N, G * (d + 1), d))


def constrained_eval(params: NetworkParams, hbc: HbcSpec, X, coef: HbcCoefficients | None = None,
                     check_domain: bool = True) -> ConstrainedOutput:
    X = np.asarray(X)
    if check_domain:
        tol = 1e-12 * np.max(hbc.domain_max - hbc.domain_min)
        outside = np.any((X < hbc.domain_min - tol) | (X > hbc.domain_max + tol), axis=1)
        if outside.any():
            i = int(np.flatnonzero(outside)[0])
            raise HbcError(f"point {X[i]} (index {i}) lies outside the domain")
    coef = hbc_coefficients(hbc, X) if coef is None else coef
    return apply_hbc(physical_evaluation(params, hbc, X), coef)


def boundary_operator(hbc: HbcSpec, out: ConstrainedOutput, axis: int, side: int) -> np.ndarray:
    """Value of the face's boundary operator, per point and group."""
    kind = hbc.kinds[axis][side]
    normal = -1.0 if side == 0 else 1.0
    pn = normal * out.p[:, :, axis]
    if kind == "dirichlet":
        return out.phi
    if kind == "neumann":
        return pn
    return -pn + 0.5 * out.phi
