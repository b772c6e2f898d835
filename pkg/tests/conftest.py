import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfpinn.physics import Geometry, MaterialField, MaterialSpec

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ref_cache(tmp_path_factory):
    """Shared reference-solution cache for the session."""
    return tmp_path_factory.mktemp("refcache")


def c5g7_materials(source=False):
    fuel_src = (0.0075, 0.0) if source else (0.0, 0.0)
    nsf1, nsf2 = ((0.0, 0.0), (0.0, 0.0)) if source else ((0.0075, 0.45), (0.0075, 0.375))
    chi = (0.0, 0.0) if source else (1.0, 0.0)
    return [
        MaterialSpec("uo2", (1.2, 0.4), (0.03, 0.3), [[0, 0.015], [0, 0]], chi, nsf1, fuel_src),
        MaterialSpec("mox", (1.2, 0.4), (0.03, 0.25), [[0, 0.015], [0, 0]], chi, nsf2, fuel_src),
        MaterialSpec("water", (1.2, 0.2), (0.051, 0.04), [[0, 0.05], [0, 0]], (0, 0), (0, 0), (0, 0)),
    ]


def homogeneous_field(L=(1.0, 1.0), bc="dirichlet", D=1.0, sigma_r=1.0, nu_sigma_f=0.0, source=0.0):
    d = len(L)
    faces = ["xmin", "xmax", "ymin", "ymax", "zmin", "zmax"][: 2 * d]
    geo = Geometry((0.0,) * d, tuple(L), [((0.0,) * d, tuple(L), "m")],
                   {f: bc for f in faces} if isinstance(bc, str) else dict(bc))
    chi = 1.0 if nu_sigma_f else 0.0
    mat = MaterialSpec("m", [D], [sigma_r], [[0.0]], [chi], [nu_sigma_f], [source])
    return MaterialField(geo, [mat])


def mixed_bc_field(d, G, rng):
    """Two-material box with one face of every boundary kind."""
    faces = ["xmin", "xmax", "ymin", "ymax", "zmin", "zmax"][: 2 * d]
    kinds = ["robin", "dirichlet", "neumann", "robin", "dirichlet", "neumann"]
    lo, hi = (0.0,) * d, (3.0, 2.0, 4.0)[:d]

    def mat(name):
        ss = np.triu(rng.uniform(0, 0.2, (G, G)), 1)
        return MaterialSpec(name, rng.uniform(0.5, 2, G), rng.uniform(0.5, 1, G), ss, np.eye(G)[0],
                            rng.uniform(0, 0.3, G), rng.uniform(0, 1, G))

    geo = Geometry(lo, hi, [(lo, hi, "a"), (lo, tuple(h / 2 for h in hi), "b")], dict(zip(faces, kinds)))
    return MaterialField(geo, [mat("a"), mat("b")])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
