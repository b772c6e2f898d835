"""Benchmark case files: strict JSON schema, validation and canonical echo.

A case file is a JSON object whose ``schema`` key must equal
:data:`SCHEMA_VERSION`. Unknown keys are rejected at every level. Removal
cross sections may be given directly (``sigma_r``), as absorption
(``sigma_a``, out-scatter is added) or as total minus self-scatter
(``sigma_t`` with ``sigma_s_self``); with ``sigma_t`` the diffusion
coefficient defaults to 1 / (3 sigma_t). :func:`case_to_dict` writes the
fully resolved form, which reloads to the same case.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from ..eigen import EigenOptions
from ..physics import FACES, AssumptionError, Geometry, GeometryError, MaterialField, MaterialSpec
from ..training import EIGEN_SCHEDULE, SOURCE_SCHEDULE, Schedule, TrainOptions

SCHEMA_VERSION = "mfpinn-case/1"
KINDS = ("source", "eigen")


class ConfigError(ValueError):
    """Invalid case file. ``path`` is the JSON key path, ``stage`` one of parse/schema/assumption."""

    def __init__(self, stage: str, path: str, message: str, clause: str | None = None):
        self.stage = stage
        self.path = path
        self.clause = clause
        super().__init__(f"{stage} error at {path or '<root>'}: {message}")


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 3}
_int_pos = {"type": "integer", "minimum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj({
    "schema": {"const": SCHEMA_VERSION},
    "name": {"type": "string", "minLength": 1},
    "kind": {"enum": list(KINDS)},
    "notes": {"type": "string"},
    "geometry": _obj({
        "domain_min": _point,
        "domain_max": _point,
        "regions": {"type": "array", "minItems": 1, "items": _obj(
            {"lo": _point, "hi": _point, "material": {"type": "string"}}, ("lo", "hi", "material"))},
        "boundary": _obj({f: {"enum": ["dirichlet", "neumann", "robin"]} for f in FACES}),
    }, ("domain_min", "domain_max", "regions", "boundary")),
    "materials": {"type": "array", "minItems": 1, "items": _obj({
        "name": {"type": "string", "minLength": 1},
        "D": _vec,
        "sigma_r": _vec,
        "sigma_a": _vec,
        "sigma_t": _vec,
        "sigma_s_self": _vec,
        "sigma_s": {"type": "array", "items": _vec},
        "chi": _vec,
        "nu_sigma_f": _vec,
        "source": _vec,
        "notes": {"type": "string"},
    }, ("name",))},
    "sampling": _obj({
        "n_points": _int_pos,
        "method": {"enum": ["sobol", "random"]},
        "seed": {"type": "integer", "minimum": 0},
    }),
    "network": _obj({
        "widths": {"type": "array", "items": _int_pos, "minItems": 1},
        "activation": {"enum": ["tanh", "sin"]},
    }),
    "training": _obj({
        "iterations": {"type": "integer", "minimum": 0},
        "loss": {"enum": ["scaled", "unscaled"]},
        "eta0": _pos,
        "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "milestone_every": _int_pos,
        "floor": _pos,
        "record_every": _int_pos,
        "resample": {"type": "boolean"},
    }),
    "eigen": _obj({
        "inner_iterations": _int_pos,
        "tol_phi": _pos,
        "tol_k": _pos,
        "max_outer": {"type": "integer", "minimum": 0},
        "k0": _pos,
        "reset_adam": {"type": "boolean"},
    }),
    "reference": _obj({
        "resolution": {"type": "array", "items": _int_pos, "minItems": 2, "maxItems": 3},
        "keff": _pos,
    }, ("resolution",)),
}, ("schema", "name", "kind", "geometry", "materials", "reference"))


@dataclass(eq=False)
class BenchmarkCase:
    name: str
    kind: str
    geometry: Geometry
    materials: list
    sampling: dict
    network: dict
    training: dict
    eigen: dict | None
    reference: dict
    notes: str = ""
    material_notes: dict = field(default_factory=dict)

    @property
    def field(self) -> MaterialField:
        return MaterialField(self.geometry, self.materials)

    @property
    def n_groups(self) -> int:
        return self.materials[0].n_groups

    @property
    def scaled(self) -> bool:
        return self.training["loss"] == "scaled"

    def train_options(self) -> TrainOptions:
        t = self.training
        return TrainOptions(
            iterations=t["iterations"], widths=tuple(self.network["widths"]),
            activation=self.network["activation"], scaled=self.scaled,
            sampler=self.sampling["method"], n_points=self.sampling["n_points"], seed=self.sampling["seed"],
            schedule=Schedule(t["eta0"], t["gamma"], t["milestone_every"], t["floor"]),
            record_every=t["record_every"], resample=t["resample"],
        )

    def eigen_options(self) -> EigenOptions:
        if self.eigen is None:
            raise ValueError(f"case {self.name!r} is not an eigenvalue case")
        return EigenOptions(**self.eigen)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _groups_error(path, message):
    return ConfigError("schema", path, message)


def _material(raw: dict, i: int) -> MaterialSpec:
    base = f"materials[{i}]"
    given = [k for k in ("sigma_r", "sigma_a", "sigma_t") if k in raw]
    if len(given) != 1:
        raise ConfigError("schema", base, "exactly one of sigma_r, sigma_a, sigma_t is required")
    if ("sigma_t" in raw) != ("sigma_s_self" in raw):
        raise ConfigError("schema", base + ".sigma_s_self", "sigma_s_self goes together with sigma_t")
    if "D" not in raw and "sigma_t" not in raw:
        raise ConfigError("schema", base + ".D", "D is required unless sigma_t is given")
    ref = raw[given[0]]
    G = len(ref)
    for key in ("D", "sigma_r", "sigma_a", "sigma_t", "sigma_s_self", "chi", "nu_sigma_f", "source"):
        if key in raw and len(raw[key]) != G:
            raise _groups_error(f"{base}.{key}", f"expected {G} group values, got {len(raw[key])}")
    sigma_s = np.zeros((G, G))
    if "sigma_s" in raw:
        s = raw["sigma_s"]
        if len(s) != G or any(len(row) != G for row in s):
            raise _groups_error(f"{base}.sigma_s", f"expected a {G}x{G} matrix")
        sigma_s = np.array(s, float)
        if np.any(np.diag(sigma_s) != 0):
            raise ConfigError("schema", f"{base}.sigma_s",
                              "diagonal (self-scatter) must be zero; use sigma_t with sigma_s_self instead")
    out_scatter = sigma_s.sum(axis=1)
    if "sigma_r" in raw:
        sigma_r = np.array(raw["sigma_r"], float)
    elif "sigma_a" in raw:
        sigma_r = np.array(raw["sigma_a"], float) + out_scatter
    else:
        sigma_r = np.array(raw["sigma_t"], float) - np.array(raw["sigma_s_self"], float)
    D = np.array(raw["D"], float) if "D" in raw else 1.0 / (3.0 * np.array(raw["sigma_t"], float))
    zeros = [0.0] * G
    return MaterialSpec(raw["name"], D, sigma_r, sigma_s, raw.get("chi", zeros),
                        raw.get("nu_sigma_f", zeros), raw.get("source", zeros))


def case_from_dict(raw: dict) -> BenchmarkCase:
    """Validate a parsed case file and build the case."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        e = errors[0]
        if e.validator == "required":
            missing = [k for k in e.validator_value if k not in e.instance]
            parts = list(e.absolute_path) + missing[:1]
            raise ConfigError("schema", _path(parts), f"missing required key {missing[0]!r}")
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            raise ConfigError("schema", _path(list(e.absolute_path) + extra[:1]), f"unknown key {extra[0]!r}")
        raise ConfigError("schema", _path(e.absolute_path), e.message)

    kind = raw["kind"]
    names = [m["name"] for m in raw["materials"]]
    if len(set(names)) != len(names):
        raise ConfigError("schema", "materials", "material names must be unique")
    materials = [_material(m, i) for i, m in enumerate(raw["materials"])]
    G = materials[0].n_groups
    for i, m in enumerate(materials):
        if m.n_groups != G:
            raise _groups_error(f"materials[{i}]", f"has {m.n_groups} groups, the first material has {G}")

    g = raw["geometry"]
    for i, r in enumerate(g["regions"]):
        if r["material"] not in names:
            raise ConfigError("schema", f"geometry.regions[{i}].material", f"unknown material {r['material']!r}")
    try:
        geometry = Geometry(tuple(g["domain_min"]), tuple(g["domain_max"]),
                            [(tuple(r["lo"]), tuple(r["hi"]), r["material"]) for r in g["regions"]],
                            dict(g["boundary"]))
    except GeometryError as exc:
        raise ConfigError("schema", "geometry", str(exc)) from exc

    try:
        MaterialField(geometry, materials)
    except AssumptionError as exc:
        i = names.index(exc.material)
        raise ConfigError("assumption", f"materials[{i}]", str(exc), clause=exc.clause) from exc
    if kind == "eigen" and not any(m.fissile for m in materials):
        raise ConfigError("assumption", "materials", "eigenvalue case needs a material with nu_sigma_f > 0",
                          clause="fission")

    res = raw["reference"]["resolution"]
    if len(res) != geometry.dim:
        raise ConfigError("schema", "reference.resolution", f"expected {geometry.dim} entries")
    if "eigen" in raw and kind != "eigen":
        raise ConfigError("schema", "eigen", "eigen options given for a source case")

    sched = EIGEN_SCHEDULE if kind == "eigen" else SOURCE_SCHEDULE
    training = dict(iterations=10000, loss="scaled", eta0=sched.eta0, gamma=sched.gamma,
                    milestone_every=sched.milestone_every, floor=sched.floor, record_every=100, resample=False)
    training.update(raw.get("training", {}))
    eigen = None
    if kind == "eigen":
        e = EigenOptions()
        eigen = dict(inner_iterations=e.inner_iterations, tol_phi=e.tol_phi, tol_k=e.tol_k,
                     max_outer=e.max_outer, k0=e.k0, reset_adam=e.reset_adam)
        eigen.update(raw.get("eigen", {}))
    sampling = dict(n_points=2048, method="sobol", seed=0)
    sampling.update(raw.get("sampling", {}))
    network = dict(widths=[64] * 5, activation="sin")
    network.update(raw.get("network", {}))
    network["widths"] = list(network["widths"])
    reference = dict(raw["reference"])
    reference["resolution"] = list(reference["resolution"])
    return BenchmarkCase(
        name=raw["name"], kind=kind, geometry=geometry, materials=materials, sampling=sampling,
        network=network, training=training, eigen=eigen, reference=reference, notes=raw.get("notes", ""),
        material_notes={m["name"]: m["notes"] for m in raw["materials"] if "notes" in m},
    )


def load_config(path) -> BenchmarkCase:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError("parse", "", f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("parse", "", "top level must be a JSON object")
    return case_from_dict(raw)


def case_to_dict(case: BenchmarkCase) -> dict:
    """Fully resolved, canonical form; ``case_from_dict`` of it rebuilds the same case."""
    g = case.geometry
    mats = []
    for m in case.materials:
        d = dict(name=m.name, D=m.D.tolist(), sigma_r=m.sigma_r.tolist(), sigma_s=m.sigma_s.tolist(),
                 chi=m.chi.tolist(), nu_sigma_f=m.nu_sigma_f.tolist(), source=m.source.tolist())
        if m.name in case.material_notes:
            d["notes"] = case.material_notes[m.name]
        mats.append(d)
    out = dict(
        schema=SCHEMA_VERSION, name=case.name, kind=case.kind,
        geometry=dict(domain_min=list(g.domain_min), domain_max=list(g.domain_max),
                      regions=[dict(lo=list(r.lo), hi=list(r.hi), material=r.material) for r in g.regions],
                      boundary=dict(g.boundary)),
        materials=mats, sampling=dict(case.sampling), network=dict(case.network, widths=list(case.network["widths"])),
        training=dict(case.training), reference=dict(case.reference, resolution=list(case.reference["resolution"])),
    )
    if case.eigen is not None:
        out["eigen"] = dict(case.eigen)
    if case.notes:
        out["notes"] = case.notes
    return out


def with_overrides(case: BenchmarkCase, *, loss=None, activation=None, sampler=None, points=None,
                   iters=None, seed=None, scale_factor=None) -> BenchmarkCase:
    """Copy of ``case`` with CLI-style overrides applied.

    ``scale_factor`` in (0, 1] shrinks point counts and iteration counts
    (inner iterations and schedule milestones for eigen cases) uniformly.
    """
    raw = case_to_dict(case)
    if loss is not None:
        raw["training"]["loss"] = loss
    if activation is not None:
        raw["network"]["activation"] = activation
    if sampler is not None:
        raw["sampling"]["method"] = sampler
    if points is not None:
        raw["sampling"]["n_points"] = int(points)
    if iters is not None:
        key = "inner_iterations" if case.kind == "eigen" else "iterations"
        (raw["eigen"] if case.kind == "eigen" else raw["training"])[key] = int(iters)
    if seed is not None:
        raw["sampling"]["seed"] = int(seed)
    if scale_factor is not None:
        f = float(scale_factor)
        if not 0 < f <= 1:
            raise ConfigError("schema", "scale_factor", "must lie in (0, 1]")
        shrink = lambda n: max(1, int(round(n * f)))
        raw["sampling"]["n_points"] = shrink(raw["sampling"]["n_points"])
        raw["training"]["iterations"] = int(round(raw["training"]["iterations"] * f))
        raw["training"]["milestone_every"] = shrink(raw["training"]["milestone_every"])
        raw["training"]["record_every"] = shrink(raw["training"]["record_every"])
        if case.kind == "eigen":
            raw["eigen"]["inner_iterations"] = shrink(raw["eigen"]["inner_iterations"])
    return case_from_dict(raw)
