import numpy as np
import pytest

from thermoporo.effective_coefficients import upscale
from thermoporo.params import PhaseParams, Profile, SourceSpec, TwoPhaseMaterial
from thermoporo.unit_cell import build_unit_cell


def contrast2_phases():
    p1 = PhaseParams(lam=1.0, mu=1.0, beta=0.9, gamma=0.7, alpha=0.2,
                     phi=0.8, kappa=1.0, lam_hat=0.6, c=1.0)
    p2 = PhaseParams(lam=2.0, mu=2.0, beta=0.6, gamma=0.5, alpha=0.1,
                     phi=0.5, kappa=2.0, lam_hat=1.2, c=0.8)
    return p1, p2


@pytest.fixture(scope="session")
def material():
    p1, p2 = contrast2_phases()
    return TwoPhaseMaterial(p1, p2, Profile("constant", value=1.0),
                            Profile("constant", value=1.0))


@pytest.fixture(scope="session")
def homogeneous_material():
    p1, _ = contrast2_phases()
    return TwoPhaseMaterial(p1, p1, Profile("constant", value=2.0),
                            Profile("constant", value=3.0))


@pytest.fixture(scope="session")
def box_cell():
    """Cube inclusion (1/4,3/4)^3, 4 voxels per side."""
    return build_unit_cell({"kind": "box", "lo": [0.25, 0.25, 0.25],
                            "hi": [0.75, 0.75, 0.75], "resolution": 4})


@pytest.fixture(scope="session")
def laminate_cell():
    return build_unit_cell({"kind": "laminate", "axis": 0, "thickness": 0.5,
                            "resolution": 8})


@pytest.fixture(scope="session")
def box_upscaled(box_cell, material):
    return upscale(box_cell, material)


@pytest.fixture(scope="session")
def laminate_upscaled(laminate_cell, material):
    return upscale(laminate_cell, material)


@pytest.fixture(scope="session")
def sources():
    return SourceSpec(g1=0.5, g2=0.3, h1=0.2, h2=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)
