"""Cell-centred finite-volume multigroup diffusion solver on a uniform grid.

Two-point flux approximation with harmonic-mean face diffusion coefficients.
Cell data are flattened with the x index running fastest, which is the
ordering of :func:`mfpinn.sampling.test_grid`.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .physics import Geometry, MaterialField

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class Assembled:
    geometry: Geometry
    field: MaterialField
    shape: tuple            # cells per axis (nx, ny[, nz])
    h: np.ndarray           # cell size per axis
    material: np.ndarray    # (cells,) material index
    D: np.ndarray           # (cells, G)
    sigma_r: np.ndarray
    sigma_s: np.ndarray     # (cells, G, G) from -> to
    chi: np.ndarray
    nu_sigma_f: np.ndarray
    source: np.ndarray
    A: list                 # per group, volume-integrated operator (csr)
    boundary_coef: list     # per group, (cells,) leakage coefficient summed over boundary faces
    misaligned: bool

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_groups(self) -> int:
        return self.D.shape[1]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def cell_centers(self) -> np.ndarray:
        lo = np.array(self.geometry.domain_min)
        axes = [lo[j] + self.h[j] * (np.arange(n) + 0.5) for j, n in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel(order="F") for m in mesh], axis=1)


@dataclass
class GridSolution:
    shape: tuple
    h: np.ndarray
    domain_min: np.ndarray
    phi: np.ndarray         # (cells, G)
    p: np.ndarray           # (cells, G, d)
    keff: float | None = None
    residual: float = 0.0
    iterations: int = 0

    def field(self, values: np.ndarray) -> np.ndarray:
        """Reshape a per-cell array to grid layout ``(nx, ny[, nz])``."""
        return np.asarray(values).reshape(self.shape, order="F")

    def cell_centers(self) -> np.ndarray:
        axes = [self.domain_min[j] + self.h[j] * (np.arange(n) + 0.5) for j, n in enumerate(self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel(order="F") for m in mesh], axis=1)


def _cell_materials(field: MaterialField, shape, h, lo, sub=5):
    """Majority material per cell from ``sub**d`` sub-samples; flags mixed cells."""
    geom = field.geometry
    d = geom.dim
    centers = np.meshgrid(*[lo[j] + h[j] * (np.arange(n) + 0.5) for j, n in enumerate(shape)], indexing="ij")
    centers = np.stack([c.ravel(order="F") for c in centers], axis=1)
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    offsets = np.stack(np.meshgrid(*([offs] * d), indexing="ij"), axis=-1).reshape(-1, d) * h
    votes = np.stack([field.material_index(centers + o) for o in offsets], axis=1)
    n_mat = len(field.materials)
    counts = np.stack([(votes == m).sum(axis=1) for m in range(n_mat)], axis=1)
    majority = counts.argmax(axis=1)
    mixed = (counts.max(axis=1) < votes.shape[1])
    return majority, bool(mixed.any())


def assemble(geometry: Geometry, field: MaterialField, resolution) -> Assembled:
    shape = tuple(int(n) for n in resolution)
    d = geometry.dim
    if len(shape) != d or any(n < 1 for n in shape):
        raise ValueError(f"resolution {resolution} invalid for a {d}-D domain")
    lo = np.array(geometry.domain_min)
    h = geometry.extent / np.array(shape)
    mat, misaligned = _cell_materials(field, shape, h, lo)
    if misaligned:
        warnings.warn("material regions do not align with the grid; using cell-majority materials",
                      RuntimeWarning, stacklevel=2)
    mats = field.materials
    D = np.stack([mats[m].D for m in range(len(mats))])[mat]
    sr = np.stack([m.sigma_r for m in mats])[mat]
    ss = np.stack([m.sigma_s for m in mats])[mat]
    chi = np.stack([m.chi for m in mats])[mat]
    nsf = np.stack([m.nu_sigma_f for m in mats])[mat]
    src = np.stack([m.source for m in mats])[mat]

    n = int(np.prod(shape))
    V = float(np.prod(h))
    idx = np.arange(n).reshape(shape, order="F")
    G = D.shape[1]
    A, bcoef = [], []
    for g in range(G):
        Dg = D[:, g].reshape(shape, order="F")
        diag = sr[:, g] * V
        rows, cols, vals = [], [], []
        bsum = np.zeros(n)
        for j in range(d):
            area = V / h[j]
            left = [slice(None)] * d
            right = [slice(None)] * d
            left[j] = slice(0, -1)
            right[j] = slice(1, None)
            DL, DR = Dg[tuple(left)], Dg[tuple(right)]
            c = (2 * DL * DR / (DL + DR)) * area / h[j]
            iL, iR = idx[tuple(left)].ravel(order="F"), idx[tuple(right)].ravel(order="F")
            c = c.ravel(order="F")
            rows += [iL, iR]
            cols += [iR, iL]
            vals += [-c, -c]
            np.add.at(diag, iL, c)
            np.add.at(diag, iR, c)
            for side in (0, 1):
                kind = geometry.face_kind(j, side)
                sl = [slice(None)] * d
                sl[j] = 0 if side == 0 else -1
                cells = idx[tuple(sl)].ravel(order="F")
                Db = Dg[tuple(sl)].ravel(order="F")
                if kind == "dirichlet":
                    cb = 2 * Db / h[j] * area
                elif kind == "robin":
                    cb = 2 * Db / (h[j] + 4 * Db) * area
                else:
                    cb = np.zeros_like(Db)
                np.add.at(bsum, cells, cb)
        diag = diag + bsum
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        Ag = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        A.append(Ag)
        bcoef.append(bsum)
    return Assembled(geometry, field, shape, h, mat, D, sr, ss, chi, nsf, src, A, bcoef, misaligned)


def _cg(A, b, x0, rtol, maxiter):
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0
    M = sp.diags(1.0 / A.diagonal())
    x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(b - A @ x) / bnorm
    if info != 0 and res > rtol * 10:
        raise SolverError(f"CG did not converge: relative residual {res:.3e}")
    return x, res


def _sweep(asm: Assembled, S: np.ndarray, phi0=None, rtol=1e-10, maxiter=20000, gs_tol=1e-12, gs_max=500):
    """Solve all groups for the external source S (cells, G), downscatter order."""
    n, G = asm.n_cells, asm.n_groups
    V = asm.cell_volume
    phi = np.zeros((n, G)) if phi0 is None else phi0.copy()
    upscatter = any(np.any(asm.sigma_s[:, g, h] != 0) for g in range(G) for h in range(g))
    res = 0.0
    for it in range(gs_max if upscatter else 1):
        old = phi.copy()
        for g in range(G):
            inscatter = np.einsum("ch,ch->c", asm.sigma_s[:, :, g], phi)
            b = V * (S[:, g] + inscatter)
            phi[:, g], r = _cg(asm.A[g], b, phi[:, g], rtol, maxiter)
            res = max(res, r)
        if upscatter and np.linalg.norm(phi - old) <= gs_tol * max(np.linalg.norm(phi), 1e-300):
            break
    return phi, res


def reconstruct_current(asm: Assembled, phi: np.ndarray) -> np.ndarray:
    """Face currents from the two-point flux, averaged to cell centres."""
    shape, h, d = asm.shape, asm.h, asm.geometry.dim
    n, G = phi.shape
    p = np.zeros((n, G, d))
    for g in range(G):
        Dg = asm.D[:, g].reshape(shape, order="F")
        ph = phi[:, g].reshape(shape, order="F")
        for j in range(d):
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[j] = slice(0, -1)
            hi[j] = slice(1, None)
            DL, DR = Dg[tuple(lo)], Dg[tuple(hi)]
            inner = -(2 * DL * DR / (DL + DR)) * (ph[tuple(hi)] - ph[tuple(lo)]) / h[j]
            face_shape = list(shape)
            face_shape[j] += 1
            faces = np.zeros(face_shape)
            mid = [slice(None)] * d
            mid[j] = slice(1, -1)
            faces[tuple(mid)] = inner
            for side in (0, 1):
                kind = asm.geometry.face_kind(j, side)
                sl = [slice(None)] * d
                sl[j] = 0 if side == 0 else -1
                Db, pb = Dg[tuple(sl)], ph[tuple(sl)]
                if kind == "dirichlet":
                    out = 2 * Db * pb / h[j]
                elif kind == "robin":
                    out = 2 * Db * pb / (h[j] + 4 * Db)
                else:
                    out = np.zeros_like(pb)
                fs = [slice(None)] * d
                fs[j] = 0 if side == 0 else -1
                # outward normal is -e_j on the low face
                faces[tuple(fs)] = -out if side == 0 else out
            a = [slice(None)] * d
            b = [slice(None)] * d
            a[j] = slice(0, -1)
            b[j] = slice(1, None)
            cell = 0.5 * (faces[tuple(a)] + faces[tuple(b)])
            p[:, g, j] = cell.ravel(order="F")
    return p


def _solution(asm, phi, keff=None, residual=0.0, iterations=0) -> GridSolution:
    return GridSolution(
        shape=asm.shape, h=asm.h.copy(), domain_min=np.array(asm.geometry.domain_min),
        phi=phi, p=reconstruct_current(asm, phi), keff=keff, residual=residual, iterations=iterations,
    )


def solve_fixed_source(asm: Assembled, S: np.ndarray | None = None, rtol: float = 1e-10) -> GridSolution:
    """Solve with the external source S (cells, G); defaults to the materials' source."""
    S = asm.source if S is None else np.asarray(S, float)
    if not np.all(np.isfinite(S)):
        raise SolverError("source has non-finite entries")
    phi, res = _sweep(asm, S, rtol=rtol)
    return _solution(asm, phi, residual=res)


def _fission_rate(asm, phi):
    return np.einsum("cg,cg->c", asm.nu_sigma_f, phi)


def power_iteration(asm: Assembled, tol_k: float = 1e-8, tol_phi: float = 1e-8,
                    max_iter: int = 5000, k0: float = 1.0) -> GridSolution:
    if not np.any(asm.nu_sigma_f > 0):
        raise SolverError("no fissile material in the domain")
    V = asm.cell_volume
    phi = np.ones((asm.n_cells, asm.n_groups))
    f = _fission_rate(asm, phi)
    f /= f.sum() * V
    phi /= _fission_rate(asm, phi).sum() * V
    k = k0
    res = 0.0
    for it in range(1, max_iter + 1):
        S = asm.chi * (f / k)[:, None]
        phi_new, res = _sweep(asm, S, phi0=phi)
        f_new = _fission_rate(asm, phi_new)
        k_new = k * f_new.sum() / f.sum()
        scale = 1.0 / (f_new.sum() * V)
        phi_new *= scale
        f_new *= scale
        dk = abs(k_new - k) / k
        dphi = np.linalg.norm(phi_new - phi) / np.linalg.norm(phi_new)
        if not np.isfinite(k_new) or k_new <= 0:
            raise SolverError(f"power iteration diverged (k={k_new})")
        phi, f, k = phi_new, f_new, k_new
        if dk <= tol_k and dphi <= tol_phi:
            break
    else:
        raise SolverError(f"power iteration not converged after {max_iter} iterations (dk={dk:.2e}, dphi={dphi:.2e})")
    if np.any(phi <= 0):
        raise SolverError("eigen flux is not strictly positive")
    log.info("power iteration converged in %d iterations, k=%.6f", it, k)
    return _solution(asm, phi, keff=k, residual=res, iterations=it)


def balance_defect(asm: Assembled, sol: GridSolution) -> float:
    """Relative defect |F/k - absorption - leakage| / (F/k) of an eigen solution."""
    V = asm.cell_volume
    phi = sol.phi
    production = _fission_rate(asm, phi).sum() * V / sol.keff
    out_scatter = asm.sigma_s.sum(axis=2)
    absorption = np.sum((asm.sigma_r - out_scatter) * phi) * V
    leakage = sum(np.dot(asm.boundary_coef[g], phi[:, g]) for g in range(asm.n_groups))
    return abs(production - absorption - leakage) / production


def interpolate(sol: GridSolution, X: np.ndarray):
    """Flux and current at arbitrary points.

    Exact cell-centre queries are looked up directly; other points use
    multilinear interpolation between cell centres (linear extrapolation in
    the half cell next to the boundary).
    """
    X = np.atleast_2d(np.asarray(X, float))
    d = len(sol.shape)
    hi = sol.domain_min + sol.h * np.array(sol.shape)
    tol = 1e-9 * np.max(hi - sol.domain_min)
    if np.any(X < sol.domain_min - tol) or np.any(X > hi + tol):
        raise ValueError("query point outside the domain")
    u = (X - sol.domain_min) / sol.h - 0.5
    nearest = np.rint(u)
    shape = np.array(sol.shape)
    if np.array_equal(u, nearest) and np.all((nearest >= 0) & (nearest < shape)):
        lin = np.ravel_multi_index(tuple(nearest.astype(int).T), sol.shape, order="F")
        return sol.phi[lin], sol.p[lin]
    i0 = np.clip(np.floor(u).astype(int), 0, np.maximum(shape - 2, 0))
    t = u - i0
    t[:, shape == 1] = 0.0
    phi = np.zeros((len(X), sol.phi.shape[1]))
    p = np.zeros((len(X),) + sol.p.shape[1:])
    for corner in np.ndindex(*([2] * d)):
        c = np.array(corner)
        idx = np.minimum(i0 + c, shape - 1)
        w = np.prod(np.where(c == 1, t, 1 - t), axis=1)
        lin = np.ravel_multi_index(tuple(idx.T), sol.shape, order="F")
        phi += w[:, None] * sol.phi[lin]
        p += w[:, None, None] * sol.p[lin]
    return phi, p
