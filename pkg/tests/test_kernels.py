import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_network
from coopbound import _kernels, _pykernels
from coopbound.eoc import _agent_part, transition_operator
from coopbound.spectral import NeighborStencil, polar_grid
from coopbound.topology import RadioParams

try:
    from coopbound import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


@pytest.fixture(scope="module")
def stencil():
    return NeighborStencil.from_radio(20.0, RadioParams(antennas_per_node=3))


@needs_ext
def test_diag_series_backends_agree():
    topo, radio = random_network(1, 30, 3)
    A = _agent_part(transition_operator(topo, radio))
    args = (A.indptr.astype(np.int32), A.indices.astype(np.int32), A.data.astype(float))
    for p in (0, 5, 17):
        for cap in (1, 40, 2000):
            # tol = 0 never stops early, so both sum exactly ``cap`` terms
            d1, n1, r1, _ = _pykernels.diag_series(*args, p, 0.0, cap)
            d2, n2, r2, _ = _ckernels.diag_series(*args, p, 0.0, cap)
            np.testing.assert_allclose(d1, d2, rtol=1e-11, atol=1e-13)
            assert n1 == n2 == cap
            assert r1 == pytest.approx(r2, rel=1e-8)


@needs_ext
def test_spectral_backends_agree(stencil):
    g = polar_grid(32, 64)
    x = np.array([[3.0, 0.0], [2.0, 5.0]])
    a = _pykernels.characteristic_grid(stencil.offsets, stencil.blocks, g.thetas)
    b = _ckernels.characteristic_grid(stencil.offsets, stencil.blocks, g.thetas)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    a = _pykernels.potential_quadrature(stencil.offsets, stencil.blocks, g.thetas, g.weights, x)
    b = _ckernels.potential_quadrature(stencil.offsets, stencil.blocks, g.thetas, g.weights, x)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12 * np.abs(a).max())


def test_backend_selection():
    assert _kernels.BACKEND in ("cython", "python")
    env = dict(os.environ, COOPBOUND_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import coopbound._kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_diag_series_cap():
    topo, radio = random_network(1, 30, 3)
    A = _agent_part(transition_operator(topo, radio))
    d, n, r, conv = _kernels.diag_series(A.indptr, A.indices, A.data, 0, 1e-30, 5)
    assert n == 5 and not conv and d.shape == (2, 2)
