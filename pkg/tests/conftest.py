import os

# Pin BLAS threading before numpy loads so repeated runs reduce identically.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from meshgp.mesh import build_spectrum, icosphere, tetrahedron  # noqa: E402


@pytest.fixture(scope="session")
def tetra_mesh():
    return tetrahedron()


@pytest.fixture(scope="session")
def tetra_spectrum(tetra_mesh):
    return build_spectrum(tetra_mesh)  # full 4-mode spectrum


@pytest.fixture(scope="session")
def unit_icosphere():
    return icosphere(subdivisions=3, radius=1.0)


@pytest.fixture(scope="session")
def unit_icosphere_spectrum(unit_icosphere):
    return build_spectrum(unit_icosphere, k=30)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
