"""RSS/AOA measurement generation and two cooperative position estimators.

The approximate maximum-likelihood (AML) estimator replaces every directed
measurement with a 2-D Gaussian on the relative position ``p_i - p_j`` and
solves the resulting Gaussian field centrally, refreshing the variances from
the previous estimate. The sequential estimator localizes agents hop by hop,
treating already localized nodes as virtual anchors.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import i0e, i1e

from .errors import InvalidParameterError, SingularNetworkError
from .topology import NetworkTopology, components_without_anchor

log = logging.getLogger(__name__)

LN10 = math.log(10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Log-distance RSS channel with von Mises bearing noise.

    Attributes
    ----------
    tx_power : float
        P_T in dBm.
    path_loss_ref : float
        L_0, the path loss at ``ref_distance`` in dB.
    path_loss_exponent : float
    ref_distance : float
        d_0 in meters. Also the distance below which the variance model is
        clamped.
    sigma_rss : float
        Shadowing standard deviation in dB.
    sigma_aoa_deg : float
        Bearing noise standard deviation in degrees.
    max_range : float
        Measurement range in meters.
    use_aoa : bool
        When False, bearings still fix each link's linearization direction but
        carry no information weight (range-only operation).
    """

    tx_power: float = 5.0
    path_loss_ref: float = 31.0
    path_loss_exponent: float = 3.69
    ref_distance: float = 1.0
    sigma_rss: float = 1.42
    sigma_aoa_deg: float = 5.0
    max_range: float = 43.0
    use_aoa: bool = True

    def __post_init__(self):
        for name in ("path_loss_exponent", "ref_distance", "sigma_rss", "sigma_aoa_deg", "max_range"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")

    @property
    def sigma_aoa(self) -> float:
        """Bearing noise standard deviation in radians."""
        return math.radians(self.sigma_aoa_deg)

    @property
    def kappa(self) -> float:
        """Von Mises concentration from the small-angle conversion ``1/sigma^2``."""
        return 1.0 / self.sigma_aoa ** 2

    @property
    def range_sigma_coeff(self) -> float:
        """``ln(10) sigma_RSS / (10 gamma)``: range standard deviation per meter."""
        return LN10 * self.sigma_rss / (10.0 * self.path_loss_exponent)

    def mean_rss(self, dist):
        return self.tx_power - self.path_loss_ref - 10.0 * self.path_loss_exponent * np.log10(
            np.asarray(dist, float) / self.ref_distance)

    def range_from_rss(self, rss):
        return self.ref_distance * 10.0 ** ((self.tx_power - self.path_loss_ref - np.asarray(rss, float))
                                            / (10.0 * self.path_loss_exponent))

    def link_intensities(self, dist):
        """Fisher information of one link from both of its directed measurements.

        Each direction contributes ``1/sigma_r(d)^2`` along the link and
        ``kappa A(kappa) / d^2`` across it, ``A = I_1/I_0``.
        """
        d = np.maximum(np.asarray(dist, float), self.ref_distance)
        radial = 2.0 / (self.range_sigma_coeff * d) ** 2
        if not self.use_aoa:
            return radial, np.zeros_like(radial)
        k = self.kappa
        tangential = 2.0 * k * (i1e(k) / i0e(k)) / d ** 2
        return radial, tangential


@dataclass(frozen=True)
class MeasurementSet:
    """Directed RSS/AOA measurements.

    Measurement ``m`` concerns the ordered pair ``(src[m], dst[m])`` and
    observes the relative position ``p_src - p_dst``: ``aoa`` estimates its
    angle and ``ranges`` its length.
    """

    src: np.ndarray
    dst: np.ndarray
    rss: np.ndarray
    aoa: np.ndarray
    ranges: np.ndarray
    channel: ChannelParams
    seed: Optional[int] = None

    @property
    def bearings(self) -> np.ndarray:
        return self.aoa

    def __len__(self):
        return len(self.src)

    def relative(self) -> np.ndarray:
        """Measured relative positions ``r (cos a, sin a)``, shape (M, 2)."""
        return self.ranges[:, None] * np.column_stack([np.cos(self.aoa), np.sin(self.aoa)])


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def generate_measurements(topo: NetworkTopology, channel: ChannelParams, seed=None,
                          noise: bool = True) -> MeasurementSet:
    """Draw both directed measurements on every link of ``topo``.

    Links longer than ``channel.max_range`` raise, since such pairs cannot
    hear each other. ``noise=False`` returns the exact means.
    """
    e = topo.edges
    if len(e):
        L = topo.edge_lengths()
        if np.any(L > channel.max_range * (1 + 1e-12)):
            raise InvalidParameterError("topology has links beyond the channel's measurement range")
    src = np.concatenate([e[:, 0], e[:, 1]]).astype(np.int64)
    dst = np.concatenate([e[:, 1], e[:, 0]]).astype(np.int64)
    disp = topo.positions[src] - topo.positions[dst]
    dist = np.hypot(disp[:, 0], disp[:, 1])
    phi = np.arctan2(disp[:, 1], disp[:, 0])
    rng = np.random.default_rng(seed)
    rss = channel.mean_rss(dist)
    aoa = phi.copy()
    if noise:
        rss = rss + rng.normal(0.0, channel.sigma_rss, len(dist))
        aoa = aoa + rng.vonmises(0.0, channel.kappa, len(dist))
    aoa = _wrap(aoa)
    return MeasurementSet(src, dst, rss, aoa, channel.range_from_rss(rss), channel, seed)


# ---------------------------------------------------------------------------
# Gaussian field pieces


def _weights(aoa, sig_r, sig_t):
    """Per-measurement precisions ``U diag(1/sig_r^2, 1/sig_t^2) U^T``."""
    u = np.column_stack([np.cos(aoa), np.sin(aoa)])
    v = np.column_stack([-u[:, 1], u[:, 0]])
    wr = 1.0 / sig_r ** 2
    wt = np.zeros_like(wr) if sig_t is None else 1.0 / sig_t ** 2
    return wr[:, None, None] * u[:, :, None] * u[:, None, :] + wt[:, None, None] * v[:, :, None] * v[:, None, :]


def _sigmas(meas: MeasurementSet, lengths):
    ch = meas.channel
    d = np.maximum(lengths, ch.ref_distance)
    sig_r = ch.range_sigma_coeff * d
    sig_t = ch.sigma_aoa * d if ch.use_aoa else None
    return sig_r, sig_t


@dataclass
class EstimatorState:
    """Output of an estimator run.

    Attributes
    ----------
    iteration : int
    positions : (N, 2)
        Estimates for agents (NaN when unlocalized), true positions for anchors.
    sigma_r, sigma_t : (M,)
        Per-measurement standard deviations used in the last iteration
        (``sigma_t`` is None without bearing information).
    precision : sparse matrix or None
        Precision matrix of the agent field in the last iteration.
    linear : ndarray or None
        Linear coefficient of the field, ``precision @ x = linear``.
    localized : (N,) bool
    layers : (N,) int or None
        Hop layer from the anchors (sequential estimator); -1 when unreachable.
    """

    iteration: int
    positions: np.ndarray
    sigma_r: np.ndarray
    sigma_t: Optional[np.ndarray]
    precision: Optional[sp.spmatrix] = None
    linear: Optional[np.ndarray] = None
    localized: np.ndarray = field(default=None)
    layers: Optional[np.ndarray] = None

    @property
    def n_unlocalized(self) -> int:
        return int(np.count_nonzero(~self.localized))


def _field(meas: MeasurementSet, topo: NetworkTopology, W, z):
    """Normal equations ``H x = b`` of ``sum_m |p_src - p_dst - z_m|^2_{W_m}`` over agents."""
    agents = topo.agent_ids
    pos = np.full(topo.n_nodes, -1, dtype=np.int64)
    pos[agents] = np.arange(len(agents))
    n = len(agents)
    anc = topo.is_anchor
    p_true = topo.positions
    b = np.zeros((n, 2))
    Wz = np.einsum("mij,mj->mi", W, z)
    rows, cols, vals = [], [], []

    def add(r, c, blk):
        rr = 2 * r[:, None, None] + np.arange(2)[None, :, None]
        cc = 2 * c[:, None, None] + np.arange(2)[None, None, :]
        rows.append(np.broadcast_to(rr, blk.shape).ravel())
        cols.append(np.broadcast_to(cc, blk.shape).ravel())
        vals.append(blk.ravel())

    s, d = meas.src, meas.dst
    sa, da = ~anc[s], ~anc[d]
    # src agent: +W on its diagonal, +Wz into b
    m = sa
    add(pos[s[m]], pos[s[m]], W[m])
    np.add.at(b, pos[s[m]], Wz[m])
    # dst agent: +W diagonal, -Wz into b
    m = da
    add(pos[d[m]], pos[d[m]], W[m])
    np.add.at(b, pos[d[m]], -Wz[m])
    # agent-agent coupling
    m = sa & da
    add(pos[s[m]], pos[d[m]], -W[m])
    add(pos[d[m]], pos[s[m]], -W[m])
    # anchors move to the right-hand side
    m = sa & ~da
    np.add.at(b, pos[s[m]], np.einsum("mij,mj->mi", W[m], p_true[d[m]]))
    m = ~sa & da
    np.add.at(b, pos[d[m]], np.einsum("mij,mj->mi", W[m], p_true[s[m]]))
    H = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n, 2 * n))
    return H, b.ravel()


def aml_estimate(meas: MeasurementSet, topo: NetworkTopology, iters: int = 10) -> EstimatorState:
    """Iterative approximate maximum-likelihood estimate.

    Iteration 1 builds the variances from the measured ranges; later
    iterations use the distance between the previous estimates. Bearings (the
    ``U`` matrices) stay at their measured values throughout.

    Raises
    ------
    SingularNetworkError
        When some agent has no measurement path to an anchor.
    """
    if iters < 1:
        raise InvalidParameterError("iters must be at least 1")
    if not meas.channel.use_aoa:
        raise InvalidParameterError("the AML field needs bearing measurements (use_aoa=True)")
    if topo.n_anchors == 0:
        raise SingularNetworkError("network has no anchors")
    bad = components_without_anchor(topo)
    if bad:
        raise SingularNetworkError(f"{len(bad)} connected component(s) contain no anchor")
    z = meas.relative()
    lengths = meas.ranges
    p = topo.positions.copy()
    agents = topo.agent_ids
    for it in range(1, iters + 1):
        sig_r, sig_t = _sigmas(meas, lengths)
        W = _weights(meas.aoa, sig_r, sig_t)
        H, b = _field(meas, topo, W, z)
        try:
            x = spla.splu(H, permc_spec="COLAMD").solve(b)
        except RuntimeError as exc:
            raise SingularNetworkError(f"singular AML precision matrix: {exc}") from None
        p = topo.positions.copy()
        p[agents] = x.reshape(-1, 2)
        rel = p[meas.src] - p[meas.dst]
        lengths = np.hypot(rel[:, 0], rel[:, 1])
    return EstimatorState(it, p, sig_r, sig_t, H, b, np.ones(topo.n_nodes, bool))


def hop_layers(topo: NetworkTopology) -> np.ndarray:
    """Breadth-first hop count from the anchor set; -1 for unreachable nodes."""
    layer = np.full(topo.n_nodes, -1, dtype=np.int64)
    q = deque()
    for a in topo.anchor_ids:
        layer[a] = 0
        q.append(a)
    adj = topo.adjacency()
    while q:
        i = q.popleft()
        for j in adj.indices[adj.indptr[i]:adj.indptr[i + 1]]:
            if layer[j] < 0:
                layer[j] = layer[i] + 1
                q.append(j)
    return layer


def sequential_estimate(meas: MeasurementSet, topo: NetworkTopology, rank_rtol: float = 1e-10) -> EstimatorState:
    """Layer-by-layer estimate using previously localized nodes as virtual anchors.

    Agent ``i`` in layer ``n`` pools the measurements shared with localized
    neighbours of layer ``n - 1`` into ``P_i = sum W`` and
    ``h_i = sum W (p_j + z)`` and takes ``P_i^-1 h_i``. Variances are frozen
    at their measured-range values. Agents whose ``P_i`` is rank deficient or
    that cannot be reached are left unlocalized (NaN).
    """
    layer = hop_layers(topo)
    sig_r, sig_t = _sigmas(meas, meas.ranges)
    W = _weights(meas.aoa, sig_r, sig_t)
    z = meas.relative()
    p = np.full((topo.n_nodes, 2), np.nan)
    p[topo.anchor_ids] = topo.positions[topo.anchor_ids]
    done = topo.is_anchor.copy()
    # measurements grouped by the agent being solved: as src (z = p_i - p_j) or as dst (z = p_j - p_i)
    order_src = np.argsort(meas.src, kind="stable")
    order_dst = np.argsort(meas.dst, kind="stable")
    ptr_src = np.searchsorted(meas.src[order_src], np.arange(topo.n_nodes + 1))
    ptr_dst = np.searchsorted(meas.dst[order_dst], np.arange(topo.n_nodes + 1))
    max_layer = int(layer.max()) if len(layer) else 0
    for n in range(1, max_layer + 1):
        newly = []
        for i in np.flatnonzero(layer == n):
            P = np.zeros((2, 2))
            h = np.zeros(2)
            for m in order_src[ptr_src[i]:ptr_src[i + 1]]:
                j = meas.dst[m]
                if layer[j] == n - 1 and done[j]:
                    P += W[m]
                    h += W[m] @ (p[j] + z[m])
            for m in order_dst[ptr_dst[i]:ptr_dst[i + 1]]:
                j = meas.src[m]
                if layer[j] == n - 1 and done[j]:
                    P += W[m]
                    h += W[m] @ (p[j] - z[m])
            ev = np.linalg.eigvalsh(P)
            if ev[-1] <= 0 or ev[0] <= rank_rtol * ev[-1]:
                continue
            p[i] = np.linalg.solve(P, h)
            newly.append(i)
        done[newly] = True
    return EstimatorState(1, p, sig_r, sig_t, None, None, done, layer)


# ---------------------------------------------------------------------------
# error curves


@dataclass(frozen=True)
class MseBin:
    center: float
    mse: float
    speb_avg: float
    n_points: int
    outage_rate: float


def mse_curve(estimates, truth, bin_width: float, distances=None, speb=None,
              lo: float = 0.0, hi: Optional[float] = None) -> List[MseBin]:
    """Per-distance-bin mean squared position error.

    Parameters
    ----------
    estimates, truth : (K, 2)
        Pooled agent estimates (NaN rows are unlocalized) and true positions.
    bin_width : float
    distances : (K,), optional
        Binning coordinate; defaults to the norm of ``truth``.
    speb : (K,), optional
        Bounds averaged per bin over the same (localized) agents as the MSE.
    lo, hi : float
        Range of the bins.

    Returns
    -------
    list of MseBin
        Empty bins are omitted. Unlocalized agents count toward
        ``outage_rate`` only.
    """
    est = np.asarray(estimates, float).reshape(-1, 2)
    tru = np.asarray(truth, float).reshape(-1, 2)
    if est.shape != tru.shape:
        raise InvalidParameterError("estimates and truth must match")
    if not bin_width > 0:
        raise InvalidParameterError("bin_width must be positive")
    d = np.hypot(tru[:, 0], tru[:, 1]) if distances is None else np.asarray(distances, float).ravel()
    err2 = np.sum((est - tru) ** 2, axis=1)
    ok = np.isfinite(err2)
    hi = float(d.max()) if hi is None else hi
    nb = max(int(math.ceil((hi - lo) / bin_width - 1e-12)), 1)
    idx = np.floor((d - lo) / bin_width).astype(np.int64)
    idx[d == hi] = nb - 1
    out = []
    for k in range(nb):
        sel = idx == k
        good = sel & ok
        if not good.any():
            if sel.any() or speb is not None:
                log.debug("bin %d omitted: no localized agents", k)
            continue
        sp_avg = float(np.mean(np.asarray(speb, float)[good])) if speb is not None else float("nan")
        out.append(MseBin(lo + (k + 0.5) * bin_width, float(err2[good].mean()), sp_avg,
                          int(good.sum()), float(1.0 - good.sum() / sel.sum())))
    return out
