"""Material data, the multigroup operators and the mixed-form residual losses.

Group indices are zero-based throughout. ``sigma_s[g, h]`` is the scattering
cross section from group ``g`` into group ``h``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FACES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")
BC_KINDS = ("dirichlet", "neumann", "robin")


class AssumptionError(ValueError):
    """A material violates the positivity / dominance assumptions."""

    def __init__(self, material: str, group: int, clause: str, detail: str = ""):
        self.material = material
        self.group = group
        self.clause = clause
        msg = f"material {material!r}, group {group}: clause {clause} violated"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    D: np.ndarray
    sigma_r: np.ndarray
    sigma_s: np.ndarray
    chi: np.ndarray
    nu_sigma_f: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        G = len(np.atleast_1d(self.D))
        vec = lambda v: np.asarray(v, dtype=float).reshape(G)
        object.__setattr__(self, "D", vec(self.D))
        object.__setattr__(self, "sigma_r", vec(self.sigma_r))
        object.__setattr__(self, "chi", vec(self.chi))
        object.__setattr__(self, "nu_sigma_f", vec(self.nu_sigma_f))
        object.__setattr__(self, "source", vec(self.source))
        s = np.asarray(self.sigma_s, dtype=float).reshape(G, G).copy()
        np.fill_diagonal(s, 0.0)
        object.__setattr__(self, "sigma_s", s)

    @property
    def n_groups(self) -> int:
        return self.D.shape[0]

    @property
    def fissile(self) -> bool:
        return bool(np.any(self.nu_sigma_f > 0))


def removal_matrix(mat: MaterialSpec) -> np.ndarray:
    """T_e with removal on the diagonal and minus in-scatter off the diagonal."""
    T = -mat.sigma_s.T.copy()
    np.fill_diagonal(T, mat.sigma_r)
    return T


def fission_matrix(mat: MaterialSpec) -> np.ndarray:
    return np.outer(mat.chi, mat.nu_sigma_f)


@dataclass(frozen=True)
class AssumptionReport:
    D_min: float
    D_max: float
    sigma_r_min: float
    sigma_r_max: float
    per_material: dict

    @property
    def norm_bounds(self) -> tuple[float, float]:
        """(m, M) with m * unscaled <= scaled <= M * unscaled."""
        m = min(self.D_min, 1.0 / self.sigma_r_max)
        M = max(self.D_max, 1.0 / self.sigma_r_min)
        return m, M


def check_assumptions(materials: Sequence[MaterialSpec]) -> AssumptionReport:
    if not materials:
        raise ValueError("no materials given")
    G = materials[0].n_groups
    per = {}
    for mat in materials:
        if mat.n_groups != G:
            raise AssumptionError(mat.name, 0, "groups", f"expected {G} groups, got {mat.n_groups}")
        for name in ("D", "sigma_r", "sigma_s", "chi", "nu_sigma_f", "source"):
            if not np.all(np.isfinite(getattr(mat, name))):
                raise AssumptionError(mat.name, 0, "finite", f"{name} has non-finite entries")
        for g in range(G):
            if not mat.D[g] > 0:
                raise AssumptionError(mat.name, g, "(i)", f"D={mat.D[g]} must be > 0")
            if not mat.sigma_r[g] > 0:
                raise AssumptionError(mat.name, g, "(ii)", f"sigma_r={mat.sigma_r[g]} must be > 0")
            out = np.abs(mat.sigma_s[g]).sum()
            if not out < mat.sigma_r[g]:
                raise AssumptionError(
                    mat.name, g, "(iii)",
                    f"out-scatter {out} not strictly below sigma_r={mat.sigma_r[g]}",
                )
            if mat.chi[g] < 0:
                raise AssumptionError(mat.name, g, "chi", "negative fission spectrum")
            if mat.nu_sigma_f[g] < 0:
                raise AssumptionError(mat.name, g, "nu_sigma_f", "negative nu*Sigma_f")
        chi_sum = mat.chi.sum()
        if not (abs(chi_sum) < 1e-12 or abs(chi_sum - 1.0) < 1e-12):
            raise AssumptionError(mat.name, 0, "chi", f"spectrum sums to {chi_sum}, expected 0 or 1")
        per[mat.name] = dict(
            D_min=float(mat.D.min()), D_max=float(mat.D.max()),
            sigma_r_min=float(mat.sigma_r.min()), sigma_r_max=float(mat.sigma_r.max()),
        )
    return AssumptionReport(
        D_min=min(p["D_min"] for p in per.values()),
        D_max=max(p["D_max"] for p in per.values()),
        sigma_r_min=min(p["sigma_r_min"] for p in per.values()),
        sigma_r_max=max(p["sigma_r_max"] for p in per.values()),
        per_material=per,
    )


@dataclass(frozen=True)
class Region:
    lo: tuple
    hi: tuple
    material: str


@dataclass(frozen=True)
class Geometry:
    """Axis-aligned box domain covered by material boxes (last listed wins)."""

    domain_min: tuple
    domain_max: tuple
    regions: tuple
    boundary: dict = field(hash=False)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.domain_min)
        hi = tuple(float(v) for v in self.domain_max)
        object.__setattr__(self, "domain_min", lo)
        object.__setattr__(self, "domain_max", hi)
        d = len(lo)
        if d not in (2, 3) or len(hi) != d:
            raise GeometryError(f"domain must be 2-D or 3-D, got bounds {lo} / {hi}")
        if any(b <= a for a, b in zip(lo, hi)):
            raise GeometryError("domain box has non-positive extent")
        regions = tuple(
            r if isinstance(r, Region) else Region(tuple(r[0]), tuple(r[1]), r[2])
            for r in self.regions
        )
        for r in regions:
            if len(r.lo) != d or len(r.hi) != d:
                raise GeometryError(f"region {r} has wrong dimension")
            if any(a < dl - 1e-12 or b > dh + 1e-12 or b <= a
                   for a, b, dl, dh in zip(r.lo, r.hi, lo, hi)):
                raise GeometryError(f"region {r} is empty or leaves the domain")
        object.__setattr__(self, "regions", regions)
        faces = FACES[: 2 * d]
        bc = dict(self.boundary)
        if set(bc) != set(faces):
            raise GeometryError(f"boundary must name exactly the faces {faces}, got {sorted(bc)}")
        for f, kind in bc.items():
            if kind not in BC_KINDS:
                raise GeometryError(f"face {f}: unknown boundary kind {kind!r}")
        object.__setattr__(self, "boundary", bc)
        self._check_coverage()

    @property
    def dim(self) -> int:
        return len(self.domain_min)

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.domain_max) - np.array(self.domain_min)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def face_kind(self, axis: int, side: int) -> str:
        return self.boundary[FACES[2 * axis + side]]

    def _check_coverage(self):
        # centres of the product grid of all region breakpoints decide coverage exactly
        cuts = []
        for j in range(self.dim):
            c = {self.domain_min[j], self.domain_max[j]}
            for r in self.regions:
                c.update((r.lo[j], r.hi[j]))
            c = np.array(sorted(c))
            cuts.append(0.5 * (c[1:] + c[:-1]))
        pts = np.array(list(itertools.product(*cuts)))
        covered = np.zeros(len(pts), bool)
        for r in self.regions:
            covered |= np.all((pts >= np.array(r.lo)) & (pts <= np.array(r.hi)), axis=1)
        if not covered.all():
            raise GeometryError(f"domain not covered by regions near {pts[~covered][0]}")

    def contains(self, X: np.ndarray, tol: float = 0.0) -> np.ndarray:
        X = np.asarray(X)
        return np.all((X >= np.array(self.domain_min) - tol) & (X <= np.array(self.domain_max) + tol), axis=1)


@dataclass(frozen=True)
class PointCoefficients:
    """Material data gathered at a batch of points."""

    material_index: np.ndarray
    D: np.ndarray            # (N, G)
    sigma_r: np.ndarray      # (N, G)
    T: np.ndarray            # (N, G, G)
    chi: np.ndarray          # (N, G)
    nu_sigma_f: np.ndarray   # (N, G)
    source: np.ndarray       # (N, G)


class MaterialField:
    """Point lookup of material data on a :class:`Geometry`."""

    def __init__(self, geometry: Geometry, materials: Sequence[MaterialSpec]):
        self.geometry = geometry
        self.materials = list(materials)
        names = [m.name for m in self.materials]
        if len(set(names)) != len(names):
            raise ValueError("duplicate material names")
        self._index = {n: i for i, n in enumerate(names)}
        for r in geometry.regions:
            if r.material not in self._index:
                raise GeometryError(f"region refers to unknown material {r.material!r}")
        self.report = check_assumptions(self.materials)
        self.n_groups = self.materials[0].n_groups
        self._D = np.stack([m.D for m in self.materials])
        self._sr = np.stack([m.sigma_r for m in self.materials])
        self._T = np.stack([removal_matrix(m) for m in self.materials])
        self._chi = np.stack([m.chi for m in self.materials])
        self._nsf = np.stack([m.nu_sigma_f for m in self.materials])
        self._src = np.stack([m.source for m in self.materials])

    def material_index(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        idx = np.full(len(X), -1, dtype=int)
        for r in self.geometry.regions:
            inside = np.all((X >= np.array(r.lo)) & (X <= np.array(r.hi)), axis=1)
            idx[inside] = self._index[r.material]
        if np.any(idx < 0):
            bad = int(np.flatnonzero(idx < 0)[0])
            raise GeometryError(f"point {X[bad]} (index {bad}) is outside every region")
        return idx

    def lookup(self, x) -> MaterialSpec:
        return self.materials[int(self.material_index(np.atleast_2d(x))[0])]

    def coefficients(self, X: np.ndarray) -> PointCoefficients:
        idx = self.material_index(X)
        return PointCoefficients(
            material_index=idx, D=self._D[idx], sigma_r=self._sr[idx], T=self._T[idx],
            chi=self._chi[idx], nu_sigma_f=self._nsf[idx], source=self._src[idx],
        )


def fission_source(coef: PointCoefficients, phi: np.ndarray) -> np.ndarray:
    return np.einsum("ng,ng->n", coef.nu_sigma_f, phi)


def emission_from_fission(coef: PointCoefficients, f: np.ndarray) -> np.ndarray:
    return coef.chi * np.asarray(f)[:, None]


def residuals(state, coef: PointCoefficients, S: np.ndarray):
    """Flux-law residual D^-1 p + grad phi and balance residual div p + T phi - S.

    ``state`` is any object with ``phi`` (N, G), ``p`` (N, G, d), ``grad_phi``
    (N, G, d) and ``div_p`` (N, G).
    """
    r_flux = state.p / coef.D[:, :, None] + state.grad_phi
    r_bal = state.div_p + np.einsum("ngh,nh->ng", coef.T, state.phi) - S
    return r_flux, r_bal


@dataclass(frozen=True)
class LossBreakdown:
    balance_term: float
    flux_law_term: float
    scaled: bool

    @property
    def total(self):
        return self.balance_term + self.flux_law_term


def loss_weights(coef: PointCoefficients, scaled: bool):
    """Per-point, per-group weights of the balance and flux-law terms."""
    if scaled:
        return 1.0 / coef.sigma_r, coef.D
    ones = np.ones_like(coef.D)
    return ones, ones


def loss_unscaled(r_flux, r_bal, n: int | None = None) -> LossBreakdown:
    n = len(r_bal) if n is None else n
    return LossBreakdown(
        balance_term=np.sum(r_bal**2) / n,
        flux_law_term=np.sum(r_flux**2) / n,
        scaled=False,
    )


def loss_scaled(r_flux, r_bal, coef: PointCoefficients, n: int | None = None) -> LossBreakdown:
    """Cross-section weighted loss: 1/sigma_r on the balance, D on the flux law."""
    n = len(r_bal) if n is None else n
    w_bal, w_flux = loss_weights(coef, True)
    return LossBreakdown(
        balance_term=np.sum(w_bal * r_bal**2) / n,
        flux_law_term=np.sum(w_flux[:, :, None] * r_flux**2) / n,
        scaled=True,
    )


def local_error_indicator(r_flux, r_bal, coef: PointCoefficients, X, cells, domain_volume=None):
    """Monte Carlo estimate of the per-cell residual indicators (eta_r, eta_f).

    Each indicator is the squared weighted residual integrated over the cell,
    estimated as cell volume times the mean over the sample points falling
    inside it. Cells without samples get ``nan``.
    """
    X = np.asarray(X)
    w_bal, w_flux = loss_weights(coef, True)
    e_r = np.sum(w_bal * r_bal**2, axis=1)
    e_f = np.sum(w_flux[:, :, None] * r_flux**2, axis=(1, 2))
    eta = np.full((len(cells), 2), np.nan)
    owner = np.full(len(X), -1)
    for c, (lo, hi) in enumerate(cells):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        inside = np.all((X >= lo) & (X < hi), axis=1) & (owner < 0)
        owner[inside] = c
        if inside.any():
            vol = np.prod(hi - lo)
            eta[c] = vol * e_r[inside].mean(), vol * e_f[inside].mean()
    return eta


def uniform_cells(geometry: Geometry, divisions) -> list:
    """Uniform partition of the domain box into ``prod(divisions)`` cells."""
    lo = np.array(geometry.domain_min)
    h = geometry.extent / np.asarray(divisions)
    cells = []
    for idx in itertools.product(*(range(n) for n in divisions)):
        a = lo + h * np.array(idx)
        cells.append((a, a + h))
    return cells
