"""Network geometries: lattice and random disks, anchors and link-budget connectivity.

All regions are disks centred at the origin, optionally punctured by circular
holes. Topologies are immutable; every operation returns a new instance.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order
from scipy.spatial import cKDTree

from .errors import InvalidParameterError

log = logging.getLogger(__name__)

# relative slack used for the "boundary included" conventions
_BOUNDARY_RTOL = 1e-9

NODES_HEADER = "# coopbound topology-nodes v1"
EDGES_HEADER = "# coopbound topology-edges v1"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RadioParams:
    """Link-level radio and waveform parameters.

    Parameters
    ----------
    path_loss_exponent : float
        Amplitude loss exponent gamma (> 2).
    bandwidth : float
        Effective bandwidth beta in Hz.
    carrier_freq : float
        Carrier frequency f_c in Hz.
    ranging_coeff : float
        Ranging coefficient zeta scaling every link's ranging intensity.
    tx_power_snr_at_1m : float
        Received SNR at 1 m in dB.
    rx_sensitivity : float
        Minimum detectable SNR in dB.
    antennas_per_node : int
        N_t. With a single antenna no bearing information is available.
    array_aperture_factor : float, optional
        Squared array aperture factor G. Defaults to r**2 / 2 for a uniform
        circular array of radius ``array_radius`` (0 when N_t = 1).
    reference_info : float
        Ranging information (per unit zeta) of a 1 m link, in m^-2. Fixes the
        otherwise arbitrary absolute information scale.
    range_override : float, optional
        Replaces the link-budget communication range when given.
    min_link_distance : float
        Distances below this are clamped in the information model. The
        path-loss law is calibrated at 1 m and is not valid closer in; without
        the clamp a centimetre-scale pair carries ~1e18 times the information
        of a typical link and the EFIM is no longer representable in double
        precision. Set to 0 to disable.
    """

    path_loss_exponent: float = 3.0
    bandwidth: float = 10e6
    carrier_freq: float = 2e9
    ranging_coeff: float = 1.0
    tx_power_snr_at_1m: float = 40.0
    rx_sensitivity: float = -15.0
    antennas_per_node: int = 3
    array_aperture_factor: Optional[float] = None
    array_radius: float = 0.15
    reference_info: float = 1.0
    range_override: Optional[float] = None
    min_link_distance: float = 1.0

    def __post_init__(self):
        if not self.path_loss_exponent > 2:
            raise InvalidParameterError("path loss exponent must exceed 2")
        if self.bandwidth <= 0 or self.carrier_freq <= 0:
            raise InvalidParameterError("bandwidth and carrier frequency must be positive")
        if int(self.antennas_per_node) != self.antennas_per_node or self.antennas_per_node < 1:
            raise InvalidParameterError("antennas_per_node must be an integer >= 1")
        if self.ranging_coeff <= 0 or self.reference_info <= 0:
            raise InvalidParameterError("ranging coefficient and reference info must be positive")
        if self.range_override is not None and self.range_override <= 0:
            raise InvalidParameterError("range override must be positive")
        if self.min_link_distance < 0:
            raise InvalidParameterError("min_link_distance must be non-negative")
        if self.antennas_per_node == 1:
            object.__setattr__(self, "array_aperture_factor", 0.0)
        elif self.array_aperture_factor is None:
            object.__setattr__(self, "array_aperture_factor", self.array_radius ** 2 / 2.0)
        elif self.array_aperture_factor < 0:
            raise InvalidParameterError("array aperture factor must be non-negative")

    @property
    def n_t(self) -> int:
        return int(self.antennas_per_node)

    @property
    def max_range(self) -> float:
        """Communication range in meters from the link budget (or the override)."""
        if self.range_override is not None:
            return float(self.range_override)
        margin = self.tx_power_snr_at_1m - self.rx_sensitivity
        return 10.0 ** (margin / (10.0 * self.path_loss_exponent))

    def link_intensities(self, dist):
        """Effective ranging and bearing intensities of links of length ``dist``.

        Returns ``N_t^2 * xi_r`` and ``N_t^2 * xi_t`` so that the link matrix is
        ``a * J_r(phi) + b * J_r(phi + pi/2)``.
        """
        dist = np.maximum(np.asarray(dist, dtype=float), self.min_link_distance)
        xi = self.ranging_coeff * dist ** (-self.path_loss_exponent)
        xi_r = self.reference_info * xi
        ratio = (self.carrier_freq / self.bandwidth) ** 2 * self.array_aperture_factor
        xi_t = xi_r * ratio / dist ** 2
        scale = float(self.n_t ** 2)
        return scale * xi_r, scale * xi_t


@dataclass(frozen=True)
class AnchorScheme:
    """How anchors are chosen; build with the class methods."""

    variant: str
    density: Optional[float] = None
    seed: Optional[int] = None
    points: tuple = ()

    _VARIANTS = ("single-center", "lattice-uniform", "binomial", "explicit",
                 "concentric-offsets")

    def __post_init__(self):
        if self.variant not in self._VARIANTS:
            raise InvalidParameterError(f"unknown anchor scheme {self.variant!r}")
        if self.variant in ("lattice-uniform", "binomial"):
            if self.density is None or not self.density > 0:
                raise InvalidParameterError("anchor density must be positive")
        if self.variant in ("explicit", "concentric-offsets") and len(self.points) == 0:
            raise InvalidParameterError("explicit anchor schemes need at least one point")

    @classmethod
    def single_center(cls):
        return cls("single-center")

    @classmethod
    def lattice_uniform(cls, density: float):
        return cls("lattice-uniform", density=float(density))

    @classmethod
    def binomial(cls, density: float, seed: int = 0):
        return cls("binomial", density=float(density), seed=int(seed))

    @classmethod
    def explicit(cls, points: Iterable[Sequence[float]]):
        return cls("explicit", points=tuple(tuple(map(float, p)) for p in points))

    @classmethod
    def concentric_offsets(cls, offsets: Iterable[Sequence[float]] = ((20, 0), (-20, 0), (0, 20), (0, -20))):
        return cls("concentric-offsets", points=tuple(tuple(map(float, p)) for p in offsets))

    @property
    def pitch(self) -> float:
        return self.density ** -0.5


@dataclass(frozen=True)
class NetworkTopology:
    """Node positions, agent/anchor labels and the undirected link set.

    Attributes
    ----------
    positions : ndarray, shape (N, 2)
        Node coordinates in meters, region centred at the origin.
    is_anchor : ndarray of bool, shape (N,)
    edges : ndarray of int, shape (E, 2)
        Unordered pairs stored with ``i < j``.
    net_diameter : float
        Diameter of the disk region.
    holes : tuple of (cx, cy, r)
        Circular holes removed from the region.
    spacing : float or None
        Lattice spacing for lattice topologies, None for random ones.
    max_range : float or None
        Communication range used to build ``edges`` (None before connecting).
    connected : bool or None
        Result of the breadth-first connectivity check.
    anchor_snap : float
        Largest distance between a requested anchor location and the node
        that was relabelled for it.
    """

    positions: np.ndarray
    is_anchor: np.ndarray
    edges: np.ndarray
    net_diameter: float
    holes: tuple = ()
    spacing: Optional[float] = None
    max_range: Optional[float] = None
    connected: Optional[bool] = None
    anchor_snap: float = 0.0
    _adj: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(np.reshape(self.positions, (-1, 2))))
        object.__setattr__(self, "is_anchor", _frozen(self.is_anchor, bool))
        object.__setattr__(self, "edges", _frozen(np.reshape(self.edges, (-1, 2)), np.int64))
        if self.is_anchor.shape != (len(self.positions),):
            raise InvalidParameterError("is_anchor must have one entry per node")
        if len(self.edges) and np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise InvalidParameterError("self-loops are not allowed")

    # -- index sets ------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def agent_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.is_anchor)

    @property
    def anchor_ids(self) -> np.ndarray:
        return np.flatnonzero(self.is_anchor)

    @property
    def n_agents(self) -> int:
        return int(np.count_nonzero(~self.is_anchor))

    @property
    def n_anchors(self) -> int:
        return int(np.count_nonzero(self.is_anchor))

    @property
    def radius(self) -> float:
        return 0.5 * self.net_diameter

    def adjacency(self):
        """Symmetric boolean adjacency as a CSR matrix (cached)."""
        if self._adj is None:
            n = self.n_nodes
            e = self.edges
            data = np.ones(2 * len(e), dtype=bool)
            rows = np.concatenate([e[:, 0], e[:, 1]])
            cols = np.concatenate([e[:, 1], e[:, 0]])
            adj = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
            object.__setattr__(self, "_adj", adj)
        return self._adj

    def neighbors(self, i: int) -> np.ndarray:
        adj = self.adjacency()
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]]

    def edge_lengths(self) -> np.ndarray:
        d = self.positions[self.edges[:, 1]] - self.positions[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def dist_to_nearest_anchor(self) -> np.ndarray:
        """Euclidean distance from every node to its nearest anchor (inf if none)."""
        if self.n_anchors == 0:
            return np.full(self.n_nodes, np.inf)
        tree = cKDTree(self.positions[self.anchor_ids])
        d, _ = tree.query(self.positions)
        return d

    def in_region(self, pts, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = np.hypot(pts[:, 0], pts[:, 1]) <= self.radius * (1 + _BOUNDARY_RTOL) + tol
        for cx, cy, r in self.holes:
            ok &= np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) >= r - tol
        return ok

    def relabel(self, anchor_ids) -> "NetworkTopology":
        """Copy with exactly the given nodes marked as anchors."""
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[np.asarray(anchor_ids, dtype=int)] = True
        return replace(self, is_anchor=mask, _adj=self._adj)


def build_lattice_disk(spacing: float, diameter: float) -> NetworkTopology:
    """All points of the square lattice ``spacing * Z^2`` inside a disk.

    Parameters
    ----------
    spacing : float
        Lattice spacing in meters.
    diameter : float
        Disk diameter; points exactly on the boundary are kept.

    Returns
    -------
    NetworkTopology
        All nodes are agents and no edges exist yet.
    """
    if not spacing > 0 or not diameter > 0:
        raise InvalidParameterError("spacing and diameter must be positive")
    rad = 0.5 * diameter / spacing
    k = int(math.floor(rad * (1 + _BOUNDARY_RTOL)))
    g = np.arange(-k, k + 1)
    ii, jj = np.meshgrid(g, g, indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    keep = ii * ii + jj * jj <= rad * rad * (1 + _BOUNDARY_RTOL)
    pts = np.column_stack([ii[keep], jj[keep]]).astype(float) * spacing
    # order by radius then angle so node 0 is the centre
    order = np.lexsort((np.arctan2(pts[:, 1], pts[:, 0]), np.round(np.hypot(pts[:, 0], pts[:, 1]), 9)))
    pts = pts[order]
    return NetworkTopology(pts, np.zeros(len(pts), bool), np.empty((0, 2), int),
                           float(diameter), spacing=float(spacing))


def _check_holes(diameter, holes):
    holes = tuple((float(c[0][0]), float(c[0][1]), float(c[1])) if len(c) == 2 else tuple(map(float, c))
                  for c in holes)
    R = 0.5 * diameter
    for k, (cx, cy, r) in enumerate(holes):
        if r <= 0:
            raise InvalidParameterError("hole radius must be positive")
        if math.hypot(cx, cy) + r > R * (1 + _BOUNDARY_RTOL):
            raise InvalidParameterError(f"hole {k} is not inside the disk")
        for cx2, cy2, r2 in holes[k + 1:]:
            if math.hypot(cx - cx2, cy - cy2) < r + r2:
                raise InvalidParameterError("overlapping holes are not supported")
    return holes


def region_area(diameter: float, holes=()) -> float:
    holes = _check_holes(diameter, holes)
    return math.pi * (0.25 * diameter ** 2 - sum(r * r for _, _, r in holes))


def build_stochastic_disk(density: float, diameter: float, holes=(), seed: int = 0) -> NetworkTopology:
    """Binomial point process on a disk minus circular holes.

    Parameters
    ----------
    density : float
        Nodes per square meter; the node count is ``floor(density * area)``.
    diameter : float
    holes : sequence
        Either ``((cx, cy), r)`` or ``(cx, cy, r)`` entries, centre-relative.
    seed : int
    """
    if not density > 0 or not diameter > 0:
        raise InvalidParameterError("density and diameter must be positive")
    holes = _check_holes(diameter, holes)
    area = region_area(diameter, holes)
    n = int(math.floor(density * area))
    if n < 1 or area <= 0:
        raise InvalidParameterError("region is empty at this density")
    rng = np.random.default_rng(seed)
    R = 0.5 * diameter
    out = []
    got = 0
    while got < n:
        m = max(64, int(1.3 * (n - got)))
        rr = R * np.sqrt(rng.random(m))
        th = 2 * np.pi * rng.random(m)
        p = np.column_stack([rr * np.cos(th), rr * np.sin(th)])
        ok = np.ones(m, bool)
        for cx, cy, r in holes:
            ok &= np.hypot(p[:, 0] - cx, p[:, 1] - cy) >= r
        p = p[ok][: n - got]
        out.append(p)
        got += len(p)
    pts = np.concatenate(out)
    return NetworkTopology(pts, np.zeros(n, bool), np.empty((0, 2), int), float(diameter), holes=holes)


def _snap_or_insert(topo, targets, tol):
    """Indices of nodes used as anchors for each target, inserting where needed."""
    pos = topo.positions
    is_anchor = topo.is_anchor.copy()
    new_pts = []
    chosen = []
    snap = 0.0
    tree = cKDTree(pos) if len(pos) else None
    for t in targets:
        if tree is not None:
            d, k = tree.query(t)
        else:
            d, k = np.inf, -1
        if d <= tol:
            chosen.append(int(k))
            snap = max(snap, float(d))
        else:
            chosen.append(len(pos) + len(new_pts))
            new_pts.append(np.asarray(t, float))
    if new_pts:
        pos = np.vstack([pos, np.array(new_pts)])
        is_anchor = np.concatenate([is_anchor, np.zeros(len(new_pts), bool)])
    is_anchor[np.unique(chosen)] = True
    return pos, is_anchor, snap


def place_anchors(topo: NetworkTopology, scheme: AnchorScheme) -> NetworkTopology:
    """Mark (or insert) anchors according to ``scheme``.

    On lattices the nearest node within half a spacing is relabelled; the
    largest such offset is stored in ``anchor_snap``. Otherwise the anchor is
    inserted as a new node. Existing edges are rebuilt with the same range.
    """
    tol = 0.5 * topo.spacing if topo.spacing else 1e-9
    v = scheme.variant
    if v == "binomial":
        rng = np.random.default_rng(scheme.seed)
        n_b = max(1, int(round(scheme.density * region_area(topo.net_diameter, topo.holes))))
        free = topo.agent_ids
        if n_b > len(free):
            raise InvalidParameterError("more anchors requested than nodes available")
        pick = rng.choice(free, size=n_b, replace=False)
        is_anchor = topo.is_anchor.copy()
        is_anchor[pick] = True
        return replace(topo, is_anchor=is_anchor, _adj=topo._adj)

    if v == "single-center":
        targets = np.zeros((1, 2))
    elif v == "lattice-uniform":
        pitch = scheme.pitch
        k = int(math.floor(topo.radius / pitch + 1e-9))
        g = np.arange(-k, k + 1) * pitch
        gx, gy = np.meshgrid(g, g, indexing="ij")
        targets = np.column_stack([gx.ravel(), gy.ravel()])
        targets = targets[topo.in_region(targets)]
        if len(targets) == 0:
            raise InvalidParameterError("anchor pitch exceeds the region")
    else:
        targets = np.asarray(scheme.points, dtype=float).reshape(-1, 2)
        if not np.all(topo.in_region(targets)):
            raise InvalidParameterError("explicit anchor points must lie in the region")

    pos, is_anchor, snap = _snap_or_insert(topo, targets, tol)
    if snap > 1e-9:
        log.info("anchor targets snapped to lattice nodes (max offset %.3g m)", snap)
    out = NetworkTopology(pos, is_anchor, topo.edges, topo.net_diameter, topo.holes,
                          topo.spacing, topo.max_range, topo.connected, max(snap, topo.anchor_snap))
    if len(pos) != topo.n_nodes and topo.max_range is not None:
        out = connect_by_link_budget(out, max_range=topo.max_range)
    return out


def connect_by_link_budget(topo: NetworkTopology, radio: Optional[RadioParams] = None,
                           max_range: Optional[float] = None) -> NetworkTopology:
    """Link every pair of nodes no farther apart than the communication range.

    Parameters
    ----------
    topo : NetworkTopology
    radio : RadioParams, optional
        Supplies the link-budget range; ignored when ``max_range`` is given.
    max_range : float, optional
        Explicit range in meters.
    """
    if max_range is None:
        if radio is None:
            raise InvalidParameterError("need radio parameters or an explicit range")
        max_range = radio.max_range
    max_range = float(max_range)
    if max_range <= 0:
        raise InvalidParameterError("range must be positive")
    tree = cKDTree(topo.positions)
    pairs = tree.query_pairs(max_range * (1 + 1e-12), output_type="ndarray")
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    out = NetworkTopology(topo.positions, topo.is_anchor, pairs, topo.net_diameter, topo.holes,
                          topo.spacing, max_range, None, topo.anchor_snap)
    n = out.n_nodes
    reached = breadth_first_order(out.adjacency(), 0, directed=False, return_predecessors=False) if n else []
    return replace(out, connected=bool(len(reached) == n), _adj=out._adj)


def interior_agents(topo: NetworkTopology, eps: float) -> np.ndarray:
    """Agents strictly inside radius ``(1 - eps) * D_net / 2``."""
    if not 0 < eps < 1:
        raise InvalidParameterError("eps must lie in (0, 1)")
    ids = topo.agent_ids
    p = topo.positions[ids]
    return ids[np.hypot(p[:, 0], p[:, 1]) < (1 - eps) * topo.radius]


def components_without_anchor(topo: NetworkTopology) -> list:
    """Connected components (as node index arrays) that contain no anchor."""
    from scipy.sparse.csgraph import connected_components

    _, lab = connected_components(topo.adjacency(), directed=False)
    out = []
    for c in np.unique(lab):
        members = np.flatnonzero(lab == c)
        if not np.any(topo.is_anchor[members]):
            out.append(members)
    return out


def write_topology_csv(topo: NetworkTopology, nodes_path, edges_path=None) -> None:
    """Write ``node_id,x,y,is_anchor`` and ``i,j,distance`` tables."""
    with open(nodes_path, "w", newline="") as fh:
        fh.write(NODES_HEADER + "\n")
        w = csv.writer(fh)
        w.writerow(["node_id", "x", "y", "is_anchor"])
        for k, (x, y) in enumerate(topo.positions):
            w.writerow([k, repr(float(x)), repr(float(y)), int(topo.is_anchor[k])])
    if edges_path is not None:
        with open(edges_path, "w", newline="") as fh:
            fh.write(EDGES_HEADER + "\n")
            w = csv.writer(fh)
            w.writerow(["i", "j", "distance"])
            for (i, j), d in zip(topo.edges, topo.edge_lengths()):
                w.writerow([int(i), int(j), repr(float(d))])


def read_topology_csv(nodes_path, edges_path=None, net_diameter=None) -> NetworkTopology:
    """Inverse of :func:`write_topology_csv` (region assumed to be a disk)."""
    rows = []
    with open(nodes_path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for r in csv.DictReader(lines):
        rows.append((float(r["x"]), float(r["y"]), bool(int(r["is_anchor"]))))
    pos = np.array([r[:2] for r in rows])
    anc = np.array([r[2] for r in rows])
    edges = np.empty((0, 2), int)
    if edges_path is not None:
        with open(edges_path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        edges = np.array([(int(r["i"]), int(r["j"])) for r in csv.DictReader(lines)], int).reshape(-1, 2)
    if net_diameter is None:
        net_diameter = 2 * float(np.max(np.hypot(pos[:, 0], pos[:, 1]))) if len(pos) else 0.0
    return NetworkTopology(pos, anc, edges, net_diameter)
