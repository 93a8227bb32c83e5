"""Reference numpy implementations of the hot kernels.

Signatures match the compiled module ``_ckernels`` exactly; results agree to
rounding.
"""
import numpy as np
import scipy.sparse as sp

_HIST = 8


def _spec2(b):
    """Spectral norm of a 2x2 matrix."""
    return np.linalg.norm(b, 2)


def diag_series(indptr, indices, data, p, tol, max_iter):
    """Sum ``sum_{n>=1} [A^n]_{pp}`` over 2x2 diagonal block ``p`` of a CSR matrix.

    Parameters
    ----------
    indptr, indices, data : CSR arrays of the (2m, 2m) matrix ``A``.
    p : int
        Block row/column.
    tol : float
        Stop once the newest block term and the geometric tail estimate of the
        remaining terms are both below ``tol``.
    max_iter : int

    Returns
    -------
    delta : ndarray (2, 2)
    n : int
        Number of terms summed.
    resid : float
        Tail estimate at exit.
    converged : bool
    """
    m2 = len(indptr) - 1
    A = sp.csr_matrix((data, indices, indptr), shape=(m2, m2))
    x = np.zeros((m2, 2))
    x[2 * p, 0] = x[2 * p + 1, 1] = 1.0
    delta = np.zeros((2, 2))
    hist = np.zeros(_HIST + 1)
    resid = np.inf
    n = 0
    while n < max_iter:
        x = A @ x
        n += 1
        blk = x[2 * p:2 * p + 2]
        delta += blk
        h = np.sqrt(np.sum(x * x))
        hist[n % (_HIST + 1)] = h
        inc = _spec2(blk)
        if h == 0.0:
            return delta, n, 0.0, True
        if n > _HIST:
            old = hist[(n - _HIST) % (_HIST + 1)]
            rho = (h / old) ** (1.0 / _HIST) if old > 0 else 0.0
            resid = h * rho / (1.0 - rho) if rho < 1.0 else np.inf
            if inc < tol and resid < tol:
                return delta, n, resid, True
    return delta, n, resid, False


def characteristic_grid(offsets, blocks, thetas):
    """``Phi(theta) = sum_x B_x cos(x . theta)`` for many frequencies.

    Parameters
    ----------
    offsets : (K, 2) float
    blocks : (K, 2, 2) float
    thetas : (M, 2) float

    Returns
    -------
    (M, 2, 2) ndarray
    """
    c = np.cos(thetas @ offsets.T)
    return (c @ blocks.reshape(len(blocks), 4)).reshape(-1, 2, 2)


def potential_quadrature(offsets, blocks, thetas, weights, displacements):
    """Weighted sum ``sum_m w_m (I - Phi_m)^-1 (1 - cos(x . theta_m))``.

    Parameters
    ----------
    offsets, blocks : stencil as in :func:`characteristic_grid`
    thetas : (M, 2) quadrature nodes
    weights : (M,) quadrature weights (including the Jacobian)
    displacements : (L, 2)

    Returns
    -------
    (L, 2, 2) ndarray
    """
    phi = characteristic_grid(offsets, blocks, thetas)
    a = 1.0 - phi[:, 0, 0]
    d = 1.0 - phi[:, 1, 1]
    b = -phi[:, 0, 1]
    c = -phi[:, 1, 0]
    det = a * d - b * c
    inv = np.stack([d, -b, -c, a], axis=1) * (weights / det)[:, None]
    k = 1.0 - np.cos(displacements @ thetas.T)
    return (k @ inv).reshape(-1, 2, 2)
