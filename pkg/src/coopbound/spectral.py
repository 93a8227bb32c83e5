"""Infinite-lattice analysis through the pseudo-characteristic function."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConvergenceError, InvalidParameterError
from .fim import link_matrices

I2 = np.eye(2)


@dataclass(frozen=True)
class NeighborStencil:
    """One-step pseudo-transition blocks of an infinite square lattice.

    Attributes
    ----------
    offsets : (K, 2) float
        Integer lattice displacements (in lattice steps) within range.
    blocks : (K, 2, 2)
        ``T_1(0, x) = D^-1 J(x)``; they sum to the identity.
    spacing : float
        Lattice spacing in meters (the length unit of ``offsets``).
    npi : (2, 2)
        ``D``, total information of a node's neighbourhood.
    """

    offsets: np.ndarray
    blocks: np.ndarray
    spacing: float
    npi: np.ndarray

    @classmethod
    def from_radio(cls, spacing: float, radio, max_range: Optional[float] = None) -> "NeighborStencil":
        """Stencil of every lattice offset within the communication range."""
        if not spacing > 0:
            raise InvalidParameterError("spacing must be positive")
        R = (radio.max_range if max_range is None else max_range) / spacing
        k = int(math.floor(R * (1 + 1e-12)))
        g = np.arange(-k, k + 1)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        off = np.column_stack([xx.ravel(), yy.ravel()]).astype(float)
        r2 = np.sum(off ** 2, axis=1)
        off = off[(r2 > 0) & (r2 <= R * R * (1 + 1e-12))]
        if len(off) == 0:
            raise InvalidParameterError("range shorter than the lattice spacing")
        J = link_matrices(radio, off * spacing)
        return cls.from_links(off, J, spacing)

    @classmethod
    def from_links(cls, offsets, links, spacing: float = 1.0) -> "NeighborStencil":
        offsets = np.asarray(offsets, float).reshape(-1, 2)
        links = np.asarray(links, float).reshape(-1, 2, 2)
        D = links.sum(axis=0)
        blocks = np.einsum("ij,kjl->kil", np.linalg.inv(D), links)
        return cls(offsets, blocks, float(spacing), D)

    @classmethod
    def nearest_four(cls) -> "NeighborStencil":
        """Isotropic nearest-neighbour stencil, blocks ``I/4``."""
        off = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], float)
        return cls.from_links(off, np.tile(I2, (4, 1, 1)))


@dataclass(frozen=True)
class SpectralSample:
    """``Phi`` and ``Sigma_2`` at one or many frequencies (leading axes of ``theta``)."""

    theta: np.ndarray
    phi: np.ndarray
    sigma2: np.ndarray


def pseudo_characteristic(stencil: NeighborStencil, theta, direction=None) -> SpectralSample:
    """Evaluate ``Phi(theta)`` and ``Sigma_2(theta)``.

    ``Phi(theta) = sum_x T_1(0,x) exp(j x.theta)`` is real for symmetric stencils
    and is computed with cosines. ``Sigma_2(theta) = |theta|^-2 sum_x (x.theta)^2
    T_1(0,x)`` depends only on the direction of ``theta``; at ``theta = 0`` the
    unit ``direction`` (default the first axis) is used.
    """
    th = np.asarray(theta, dtype=float)
    shape = th.shape[:-1]
    flat = th.reshape(-1, 2)
    phi = _kernels.characteristic_grid(stencil.offsets, stencil.blocks, flat)
    nrm = np.hypot(flat[:, 0], flat[:, 1])
    u = np.empty_like(flat)
    nz = nrm > 0
    u[nz] = flat[nz] / nrm[nz, None]
    d0 = np.array([1.0, 0.0]) if direction is None else np.asarray(direction, float) / np.linalg.norm(direction)
    u[~nz] = d0
    proj = (u @ stencil.offsets.T) ** 2
    sig = (proj @ stencil.blocks.reshape(-1, 4)).reshape(-1, 2, 2)
    return SpectralSample(th, phi.reshape(shape + (2, 2)), sig.reshape(shape + (2, 2)))


@dataclass(frozen=True)
class QuadratureGrid:
    """Polar quadrature nodes and weights (Jacobian included)."""

    thetas: np.ndarray
    weights: np.ndarray
    domain: str
    n_angles: int = 0
    n_radial: int = 0
    r_min: float = 0.0


def polar_grid(n_angles: int = 256, n_radial: int = 512, r_min: float = 1e-4 * np.pi,
               domain: str = "square") -> QuadratureGrid:
    """Polar trapezoidal grid on the disk ``|theta| <= pi`` or the square ``[-pi, pi]^2``.

    Radii are geometric between ``r_min`` and the outer boundary (``pi`` for
    the disk, the square's edge along each ray otherwise), so the grid is
    densest near the origin where the integrand varies fastest.
    """
    if domain not in ("disk", "square"):
        raise InvalidParameterError(f"unknown domain {domain!r}")
    ang = 2 * np.pi * np.arange(n_angles) / n_angles
    c, s = np.cos(ang), np.sin(ang)
    if domain == "disk":
        rmax = np.full(n_angles, np.pi)
    else:
        rmax = np.pi / np.maximum(np.abs(c), np.abs(s))
    t = np.linspace(0.0, 1.0, n_radial)
    # (n_angles, n_radial) radii, geometric along each ray
    r = r_min * (rmax[:, None] / r_min) ** t[None, :]
    dr = np.diff(r, axis=1)
    wr = np.zeros_like(r)
    wr[:, :-1] += 0.5 * dr
    wr[:, 1:] += 0.5 * dr
    w = wr * r * (2 * np.pi / n_angles)
    th = np.stack([r * c[:, None], r * s[:, None]], axis=-1).reshape(-1, 2)
    return QuadratureGrid(th, w.ravel(), domain, n_angles, n_radial, r_min)


def potential_infinite(stencil: NeighborStencil, displacement, grid: Optional[QuadratureGrid] = None,
                       domain: str = "square", check_imag: bool = True, imag_tol: float = 1e-8,
                       rtol: Optional[float] = None) -> np.ndarray:
    """Infinite-lattice potential ``(2 pi)^-2 int (I - Phi)^-1 (1 - cos(x.theta)) dtheta``.

    Parameters
    ----------
    stencil : NeighborStencil
    displacement : (2,) or (L, 2) array of lattice vectors
    grid : QuadratureGrid, optional
        Defaults to ``polar_grid(domain=domain)``.
    domain : {"square", "disk"}
        The square ``[-pi, pi]^2`` is the full frequency cell of the lattice
        and reproduces finite-lattice kernels; the disk drops its corners and
        is kept only for comparison.
    check_imag : bool
        Verify that the odd (sine) part integrates to zero.
    rtol : float, optional
        When given, repeat the quadrature on a grid with half the shells and
        angles and raise :class:`ConvergenceError` if the two differ by more
        than ``rtol`` relative.

    Returns
    -------
    (2, 2) or (L, 2, 2) ndarray
        Zero blocks for zero displacement.
    """
    x = np.asarray(displacement, dtype=float)
    single = x.ndim == 1
    x = x.reshape(-1, 2)
    if grid is None:
        grid = polar_grid(domain=domain)
    out = _quadrature(stencil, grid, x)
    if rtol is not None:
        if not grid.n_angles:
            raise InvalidParameterError("residual estimate needs a grid built by polar_grid")
        coarse = polar_grid(grid.n_angles // 2, grid.n_radial // 2, grid.r_min, grid.domain)
        est = np.abs(_quadrature(stencil, coarse, x) - out).max()
        if est > rtol * max(np.abs(out).max(), 1e-300):
            raise ConvergenceError(f"quadrature residual estimate {est:.3g} above tolerance", out[0] if single else out)
    if check_imag:
        # sine part of the integrand; odd in theta, so it must cancel
        phi = _kernels.characteristic_grid(stencil.offsets, stencil.blocks, grid.thetas)
        inv = np.linalg.inv(I2 - phi)
        im = np.einsum("m,lm,mij->lij", grid.weights, np.sin(x @ grid.thetas.T), inv) / (2 * np.pi) ** 2
        scale = np.abs(out).max() if out.size else 1.0
        if np.abs(im).max() > imag_tol * max(scale, 1.0):
            raise RuntimeError(f"odd part of the integrand did not cancel ({np.abs(im).max():.3g})")
    return out[0] if single else out


def _quadrature(stencil, grid, x):
    out = _kernels.potential_quadrature(stencil.offsets, stencil.blocks, grid.thetas, grid.weights, x)
    out /= (2 * np.pi) ** 2
    out[np.all(x == 0, axis=1)] = 0.0
    return out


# ---------------------------------------------------------------------------
# asymptotic fits

_MODELS = {
    "log": np.log,
    "quadratic": np.square,
    "sqrt": np.sqrt,
    "linear": lambda d: d,
}


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float
    model: str
    n: int

    def predict(self, d):
        return self.slope * _MODELS[self.model](np.asarray(d, float)) + self.intercept


def asymptote_fit(values, model: str = "log", y=None, min_points: int = 8) -> FitResult:
    """Least-squares fit ``y = a f(d) + b`` with ``f`` in {log, d^2, sqrt, d}.

    Parameters
    ----------
    values : sequence of (distance, value) pairs, or distances when ``y`` is given
    model : {"log", "quadratic", "sqrt", "linear"}
    y : array, optional
    min_points : int

    Returns
    -------
    FitResult
        Slope, intercept and coefficient of determination.
    """
    if model not in _MODELS:
        raise InvalidParameterError(f"unknown model {model!r}")
    if y is None:
        arr = np.asarray(values, dtype=float).reshape(-1, 2)
        d, v = arr[:, 0], arr[:, 1]
    else:
        d, v = np.asarray(values, float).ravel(), np.asarray(y, float).ravel()
    if len(d) < min_points:
        raise InvalidParameterError(f"need at least {min_points} points, got {len(d)}")
    if np.any(d <= 0) or not np.all(np.isfinite(v)):
        raise InvalidParameterError("distances must be positive and values finite")
    f = _MODELS[model](d)
    if np.ptp(f) <= 1e-12 * max(1.0, np.abs(f).max()):
        raise InvalidParameterError("degenerate abscissa")
    A = np.column_stack([f, np.ones_like(f)])
    (a, b), *_ = np.linalg.lstsq(A, v, rcond=None)
    res = v - (a * f + b)
    ss_tot = np.sum((v - v.mean()) ** 2)
    r2 = 1.0 - np.sum(res ** 2) / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(a), float(b), float(r2), model, len(d))


# ---------------------------------------------------------------------------
# tabulation for export


def characteristic_table(stencil: NeighborStencil, n: int = 33) -> dict:
    """``Phi`` on an ``n x n`` grid over ``[-pi, pi]^2``.

    Columns ``theta1, theta2, phi_xx, phi_xy, phi_yy``.
    """
    g = np.linspace(-np.pi, np.pi, int(n))
    t1, t2 = np.meshgrid(g, g, indexing="ij")
    th = np.column_stack([t1.ravel(), t2.ravel()])
    phi = pseudo_characteristic(stencil, th).phi
    return {"theta1": th[:, 0], "theta2": th[:, 1], "phi_xx": phi[:, 0, 0], "phi_xy": phi[:, 0, 1],
            "phi_yy": phi[:, 1, 1]}


def potential_profile(stencil: NeighborStencil, steps, direction=(1.0, 0.0),
                      grid: Optional[QuadratureGrid] = None) -> dict:
    """Eigenvalues of the infinite-lattice potential along a lattice direction.

    ``steps`` are integer multiples of ``direction`` (a lattice vector);
    ``dist`` is reported in meters. Columns ``dist, p_eig_min, p_eig_max``.
    """
    steps = np.asarray(steps, float).ravel()
    u = np.asarray(direction, float)
    P = potential_infinite(stencil, steps[:, None] * u[None, :], grid=grid)
    ev = np.linalg.eigvalsh(0.5 * (P + np.swapaxes(P, 1, 2)))
    return {"dist": steps * np.linalg.norm(u) * stencil.spacing, "p_eig_min": ev[:, 0], "p_eig_max": ev[:, 1]}
