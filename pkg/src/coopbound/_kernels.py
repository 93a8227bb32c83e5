"""Select the compiled kernels when available, else the numpy fallback.

Set ``COOPBOUND_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("COOPBOUND_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def diag_series(indptr, indices, data, p, tol, max_iter):
    return _impl.diag_series(np.ascontiguousarray(indptr, dtype=np.int32),
                             np.ascontiguousarray(indices, dtype=np.int32),
                             np.ascontiguousarray(data, dtype=float), int(p), float(tol), int(max_iter))


def characteristic_grid(offsets, blocks, thetas):
    return _impl.characteristic_grid(np.ascontiguousarray(offsets, dtype=float),
                                     np.ascontiguousarray(blocks, dtype=float),
                                     np.ascontiguousarray(np.reshape(thetas, (-1, 2)), dtype=float))


def potential_quadrature(offsets, blocks, thetas, weights, displacements):
    return _impl.potential_quadrature(np.ascontiguousarray(offsets, dtype=float),
                                      np.ascontiguousarray(blocks, dtype=float),
                                      np.ascontiguousarray(thetas, dtype=float),
                                      np.ascontiguousarray(weights, dtype=float),
                                      np.ascontiguousarray(np.reshape(displacements, (-1, 2)), dtype=float))
