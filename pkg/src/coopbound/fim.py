"""Link information, network EFIM assembly and exact per-agent bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameterError, SingularNetworkError
from .topology import NetworkTopology, components_without_anchor

RANK_RTOL = 1e-10
# block count above which the sparse factorization is used
DENSE_LIMIT = 500
# reciprocal condition threshold after symmetric diagonal scaling; exactly
# singular networks land near 1e-17, stiff but valid ones (close pairs) near 1e-13
_RCOND_MIN = 1e-15


def ranging_direction(phi):
    """Rank-one direction matrix ``u u^T`` with ``u = (cos phi, sin phi)``."""
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c * c, c * s], [c * s, s * s]])


def link_matrix(xi_r: float, xi_t: float, phi: float, n_t: int = 1) -> np.ndarray:
    """``N_t^2 (xi_r J_r(phi) + xi_t J_r(phi + pi/2))``; the bearing term is dropped for N_t = 1."""
    if n_t == 1:
        xi_t = 0.0
    return n_t ** 2 * (xi_r * ranging_direction(phi) + xi_t * ranging_direction(phi + np.pi / 2))


@dataclass(frozen=True)
class LinkInformation:
    """Fisher information a single link contributes about its displacement."""

    matrix: np.ndarray
    xi_r: float
    xi_t: float
    angle: float
    n_t: int = 1


def link_information(radio, displacement) -> LinkInformation:
    """Information of the link along ``displacement`` (meters) under ``radio``.

    The returned ``xi_r`` and ``xi_t`` exclude the ``N_t^2`` array gain, which
    is applied to ``matrix`` only.
    """
    d = np.asarray(displacement, dtype=float)
    dist = float(np.hypot(d[0], d[1]))
    if dist == 0.0:
        raise InvalidParameterError("co-located nodes carry no usable link information")
    a, b = radio.link_intensities(dist)
    n_t = int(getattr(radio, "n_t", 1))
    phi = math.atan2(d[1], d[0])
    g = float(n_t ** 2)
    return LinkInformation(link_matrix(float(a) / g, float(b) / g, phi, n_t), float(a) / g,
                           float(b) / g, phi, n_t)


def link_matrices(model, disp: np.ndarray) -> np.ndarray:
    """Vectorized link matrices, shape (E, 2, 2), for displacement rows ``disp``.

    ``model`` is any object with ``link_intensities(dist) -> (a, b)`` giving the
    radial and tangential eigenvalues.
    """
    disp = np.asarray(disp, dtype=float).reshape(-1, 2)
    dist = np.hypot(disp[:, 0], disp[:, 1])
    if np.any(dist == 0):
        raise InvalidParameterError("co-located nodes carry no usable link information")
    a, b = model.link_intensities(dist)
    u = disp / dist[:, None]
    v = np.column_stack([-u[:, 1], u[:, 0]])
    return (np.asarray(a)[:, None, None] * u[:, :, None] * u[:, None, :]
            + np.asarray(b)[:, None, None] * v[:, :, None] * v[:, None, :])


class BlockMatrix:
    """Square matrix addressed by 2x2 blocks.

    Parameters
    ----------
    matrix : ndarray or scipy sparse matrix, shape (2n, 2n)
    index : array of int, optional
        Node id of every block row; defaults to ``arange(n)``.
    """

    def __init__(self, matrix, index=None, meta=None):
        if matrix.shape[0] != matrix.shape[1] or matrix.shape[0] % 2:
            raise InvalidParameterError("block matrices must be 2n x 2n")
        self.matrix = matrix.tocsr() if sp.issparse(matrix) else np.asarray(matrix)
        n = matrix.shape[0] // 2
        self.index = np.arange(n) if index is None else np.asarray(index, dtype=np.int64)
        self._pos = {int(k): p for p, k in enumerate(self.index)}
        self.meta = dict(meta or {})

    @property
    def n_blocks(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def position(self, node: int) -> int:
        """Block row holding ``node``."""
        try:
            return self._pos[int(node)]
        except KeyError:
            raise InvalidParameterError(f"node {node} has no block in this matrix") from None

    def block(self, a: int, b: int) -> np.ndarray:
        """The 2x2 block for nodes ``a`` (row) and ``b`` (column)."""
        p, q = self.position(a), self.position(b)
        m = self.matrix[2 * p:2 * p + 2, 2 * q:2 * q + 2]
        return m.toarray() if sp.issparse(m) else np.array(m)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.array(self.matrix)

    def diagonal_blocks(self) -> np.ndarray:
        n = self.n_blocks
        d = self.matrix.diagonal()
        if self.is_sparse:
            off = self.matrix.diagonal(1)[0::2]
            off_l = self.matrix.diagonal(-1)[0::2]
        else:
            off = np.diagonal(self.matrix, 1)[0::2]
            off_l = np.diagonal(self.matrix, -1)[0::2]
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = d[0::2]
        out[:, 1, 1] = d[1::2]
        out[:, 0, 1] = off
        out[:, 1, 0] = off_l
        return out

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"BlockMatrix(n_blocks={self.n_blocks}, {kind})"


def block_csr(n: int, rows, cols, blocks, diag=None):
    """Assemble a 2n x 2n CSR matrix from 2x2 blocks (duplicates summed)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    blocks = np.asarray(blocks, dtype=float).reshape(-1, 2, 2)
    if diag is not None:
        rows = np.concatenate([rows, np.arange(n)])
        cols = np.concatenate([cols, np.arange(n)])
        blocks = np.concatenate([blocks, np.asarray(diag, float).reshape(-1, 2, 2)])
    r = (2 * rows[:, None, None] + np.arange(2)[None, :, None]) + np.zeros((1, 1, 2), np.int64)
    c = (2 * cols[:, None, None] + np.arange(2)[None, None, :]) + np.zeros((1, 2, 1), np.int64)
    m = sp.coo_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=(2 * n, 2 * n))
    return m.tocsr()


def edge_link_matrices(topo: NetworkTopology, radio) -> np.ndarray:
    """Link matrices for ``topo.edges`` in edge order, shape (E, 2, 2)."""
    if len(topo.edges) == 0:
        return np.empty((0, 2, 2))
    e = topo.edges
    return link_matrices(radio, topo.positions[e[:, 1]] - topo.positions[e[:, 0]])


def npi_blocks(topo: NetworkTopology, radio, links: Optional[np.ndarray] = None) -> np.ndarray:
    """Nominal position information ``D_i = sum_j J_ij`` for every node, shape (N, 2, 2).

    Every neighbour counts, agents and anchors alike.
    """
    if links is None:
        links = edge_link_matrices(topo, radio)
    D = np.zeros((topo.n_nodes, 2, 2))
    np.add.at(D, topo.edges[:, 0], links)
    np.add.at(D, topo.edges[:, 1], links)
    return D


def assemble_efim(topo: NetworkTopology, radio, mode: str = "original") -> BlockMatrix:
    """Network EFIM ``D - A`` over agents, or the anchor-free auxiliary EFIM.

    Parameters
    ----------
    topo : NetworkTopology
        Must have edges.
    radio : RadioParams or compatible link model
    mode : {"original", "auxiliary"}
        ``original`` returns the 2N_a x 2N_a matrix whose off-diagonal blocks are
        ``-J_ij`` for linked agent pairs. ``auxiliary`` treats anchors as agents
        and returns the singular 2N x 2N matrix.

    Returns
    -------
    BlockMatrix
        Sparse storage; ``index`` maps block rows to node ids.
    """
    if mode not in ("original", "auxiliary"):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    links = edge_link_matrices(topo, radio)
    D = npi_blocks(topo, radio, links)
    e = topo.edges
    if mode == "auxiliary":
        nodes = np.arange(topo.n_nodes)
        keep = np.ones(len(e), bool)
    else:
        nodes = topo.agent_ids
        keep = ~(topo.is_anchor[e[:, 0]] | topo.is_anchor[e[:, 1]])
    pos = np.full(topo.n_nodes, -1, dtype=np.int64)
    pos[nodes] = np.arange(len(nodes))
    ee, J = e[keep], links[keep]
    r = np.concatenate([pos[ee[:, 0]], pos[ee[:, 1]]])
    c = np.concatenate([pos[ee[:, 1]], pos[ee[:, 0]]])
    m = block_csr(len(nodes), r, c, -np.concatenate([J, J]), diag=D[nodes])
    return BlockMatrix(m, nodes, meta={"mode": mode, "topology": topo, "radio": radio, "npi": D})


# ---------------------------------------------------------------------------
# direct inversion


def _singularity_cause(efim: BlockMatrix) -> str:
    topo = efim.meta.get("topology")
    if topo is None:
        return "information matrix is numerically singular"
    if topo.n_anchors == 0:
        return "network has no anchors"
    bad = components_without_anchor(topo)
    if bad:
        return f"{len(bad)} connected component(s) contain no anchor (e.g. nodes {bad[0][:5].tolist()})"
    n_t = getattr(efim.meta.get("radio"), "n_t", None)
    if n_t == 1:
        return "range-only network is not rigidly anchored (degenerate anchor geometry or flexible links)"
    return "information matrix is numerically singular"


class EfimSolver:
    """Factorization of an original-network EFIM reused across agents.

    The matrix is scaled symmetrically to unit diagonal before factoring, so
    the conditioning test ignores the spread of link strengths (very close
    node pairs carry orders of magnitude more information than far ones).
    Dense Cholesky is used up to ``DENSE_LIMIT`` blocks, a sparse LU with a
    fill-reducing column ordering above it.
    """

    def __init__(self, efim: BlockMatrix, dense_limit: int = DENSE_LIMIT):
        self.efim = efim
        self.n = efim.n_blocks
        self.dense = self.n <= dense_limit
        self.rcond = 0.0
        m = efim.matrix
        diag = np.asarray(m.diagonal(), dtype=float)
        self.scale = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
        try:
            if self.dense:
                a = m.toarray() if sp.issparse(m) else np.array(m, dtype=float)
                a = a * self.scale[:, None] * self.scale[None, :]
                anorm = np.abs(a).sum(axis=0).max() if a.size else 0.0
                self._cho = sla.cho_factor(a, lower=True)
                pocon = sla.get_lapack_funcs("pocon", (a,))
                self.rcond, _ = pocon(self._cho[0], anorm, uplo="L")
            else:
                S = sp.diags(self.scale)
                a = sp.csc_matrix(S @ sp.csr_matrix(m) @ S)
                self._lu = spla.splu(a, permc_spec="COLAMD")
                inv = spla.LinearOperator(a.shape, matvec=self._lu.solve,
                                          rmatvec=lambda x: self._lu.solve(x, trans="T"))
                anorm = spla.norm(a, 1)
                self.rcond = 1.0 / (anorm * spla.onenormest(inv)) if anorm > 0 else 0.0
        except (np.linalg.LinAlgError, sla.LinAlgError, RuntimeError):
            self.rcond = 0.0
        self.ok = bool(self.rcond > _RCOND_MIN) and bool(np.all(diag > 0))

    def solve(self, b):
        if not self.ok:
            raise SingularNetworkError(_singularity_cause(self.efim))
        b = np.asarray(b, dtype=float)
        sb = b * (self.scale[:, None] if b.ndim == 2 else self.scale)
        x = sla.cho_solve(self._cho, sb) if self.dense else self._lu.solve(sb)
        return x * (self.scale[:, None] if b.ndim == 2 else self.scale)

    def inverse_diagonal_blocks(self, chunk: int = 512) -> np.ndarray:
        """``[J^-1]_{ii}`` for every block row, shape (n, 2, 2)."""
        n2 = 2 * self.n
        out = np.empty((self.n, 2, 2))
        for s in range(0, n2, chunk):
            e = min(n2, s + chunk)
            rhs = np.zeros((n2, e - s))
            rhs[np.arange(s, e), np.arange(e - s)] = 1.0
            x = self.solve(rhs)
            for col in range(s, e, 2):
                k = col // 2
                out[k] = x[2 * k:2 * k + 2, col - s:col - s + 2]
        return out


def _schur_block(efim: BlockMatrix, p: int) -> np.ndarray:
    """Schur complement of block row ``p``: ``J_pp - J_pr J_rr^-1 J_rp``."""
    m = sp.csr_matrix(efim.matrix)
    n2 = m.shape[0]
    keep = np.ones(n2, bool)
    keep[2 * p:2 * p + 2] = False
    rest = np.flatnonzero(keep)
    J_rr = m[rest][:, rest]
    J_rp = m[rest][:, 2 * p:2 * p + 2].toarray()
    J_pp = m[2 * p:2 * p + 2][:, 2 * p:2 * p + 2].toarray()
    if len(rest) == 0:
        return J_pp
    sub = BlockMatrix(J_rr, meta=efim.meta)
    solver = EfimSolver(sub)
    if not solver.ok:
        raise SingularNetworkError(_singularity_cause(efim))
    x = solver.solve(J_rp)
    s = J_pp - J_rp.T @ x
    return 0.5 * (s + s.T)


def agent_efim_direct(efim: BlockMatrix, i: int, solver: Optional[EfimSolver] = None) -> np.ndarray:
    """Per-agent EFIM ``([J_e^-1]_{ii})^-1`` of node ``i``.

    When the full EFIM is singular but the rest of the network pins agent i's
    complement (range-only networks with too few anchors), the generalized
    Schur complement ``J_ii - J_ir J_rr^-1 J_ri`` is returned instead; it is
    then rank deficient.

    Raises
    ------
    SingularNetworkError
        If neither form exists; the message names the structural cause.
    """
    p = efim.position(i)
    if solver is None:
        solver = EfimSolver(efim)
    if solver.ok:
        rhs = np.zeros((2 * efim.n_blocks, 2))
        rhs[2 * p, 0] = rhs[2 * p + 1, 1] = 1.0
        x = solver.solve(rhs)[2 * p:2 * p + 2]
        out = np.linalg.inv(0.5 * (x + x.T))
        return 0.5 * (out + out.T)
    return _schur_block(efim, p)


def agent_efims(efim: BlockMatrix) -> np.ndarray:
    """Per-agent EFIMs for every block row, shape (n, 2, 2)."""
    solver = EfimSolver(efim)
    if solver.ok:
        inv = solver.inverse_diagonal_blocks()
        inv = 0.5 * (inv + inv.transpose(0, 2, 1))
        out = np.linalg.inv(inv)
        return 0.5 * (out + out.transpose(0, 2, 1))
    return np.array([_schur_block(efim, p) for p in range(efim.n_blocks)])


# ---------------------------------------------------------------------------
# metrics


def _unit(u):
    u = np.asarray(u, dtype=float)
    return u / np.linalg.norm(u)


@dataclass(frozen=True)
class AgentBound:
    """Error bounds derived from a 2x2 per-agent EFIM.

    Attributes
    ----------
    efim : ndarray (2, 2)
    speb : float
        Trace of the inverse EFIM (inf when rank deficient).
    ellipse : tuple
        ``(a, b, theta)``: semi-major and semi-minor axes ``lambda^-1/2`` and the
        major-axis orientation in (-pi/2, pi/2].
    rank : int
    dpeb_values : ndarray
        DPEBs for the requested directions.
    """

    efim: np.ndarray
    speb: float
    ellipse: tuple
    rank: int
    eigvals: np.ndarray
    eigvecs: np.ndarray
    dpeb_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def dpeb(self, u) -> float:
        """``u^T J^-1 u`` for a direction ``u`` (normalized here); inf along a null direction."""
        u = _unit(u)
        w, V = self.eigvals, self.eigvecs
        c = V.T @ u
        tot = 0.0
        for k in range(2):
            if w[k] <= RANK_RTOL * max(w[1], 0.0) or w[k] <= 0:
                if abs(c[k]) > 1e-8:
                    return math.inf
            else:
                tot += c[k] ** 2 / w[k]
        return float(tot)


def performance_metrics(efim_2x2, directions: Optional[Sequence] = None) -> AgentBound:
    """SPEB, DPEBs and the error ellipse of a 2x2 EFIM."""
    J = np.asarray(efim_2x2, dtype=float)
    J = 0.5 * (J + J.T)
    w, V = np.linalg.eigh(J)
    lam_max = max(w[1], 0.0)
    rank = int(np.sum(w > RANK_RTOL * lam_max)) if lam_max > 0 else 0
    if rank == 2:
        speb = float(1.0 / w[0] + 1.0 / w[1])
        a, b = w[0] ** -0.5, w[1] ** -0.5
    else:
        speb = math.inf
        a = math.inf
        b = w[1] ** -0.5 if rank == 1 else math.inf
    vx, vy = V[:, 0]
    theta = math.atan2(vy, vx)
    if theta <= -np.pi / 2:
        theta += np.pi
    elif theta > np.pi / 2:
        theta -= np.pi
    out = AgentBound(J, speb, (float(a), float(b), float(theta)), rank, w, V)
    if directions is not None:
        vals = np.array([out.dpeb(u) for u in np.atleast_2d(directions)])
        out = AgentBound(J, speb, out.ellipse, rank, w, V, vals)
    return out


def bounds_table(efims: np.ndarray, positions: np.ndarray, anchor_positions: np.ndarray, reference=None):
    """Vectorized SPEB, radial/tangential DPEB and ellipse for many agents.

    Radial/tangential directions are taken relative to ``reference`` when
    given (e.g. the anchor centroid), else to each agent's nearest anchor.

    Returns
    -------
    dict of ndarray
        Keys ``speb, dpeb_radial, dpeb_tangential, ellipse_a, ellipse_b,
        ellipse_theta, dist_to_nearest_anchor, dist_to_reference``.
    """
    efims = np.asarray(efims, float).reshape(-1, 2, 2)
    positions = np.asarray(positions, float).reshape(-1, 2)
    anchor_positions = np.asarray(anchor_positions, float).reshape(-1, 2)
    dd = positions[:, None, :] - anchor_positions[None, :, :]
    dn = np.hypot(dd[..., 0], dd[..., 1])
    k = np.argmin(dn, axis=1)
    dist_near = dn[np.arange(len(positions)), k]
    if reference is None:
        rvec = dd[np.arange(len(positions)), k]
    else:
        rvec = positions - np.asarray(reference, float).reshape(1, 2)
    dist = np.hypot(rvec[:, 0], rvec[:, 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        ur = rvec / dist[:, None]
    ur[dist == 0] = [1.0, 0.0]
    ut = np.column_stack([-ur[:, 1], ur[:, 0]])
    res = {key: np.empty(len(efims)) for key in
           ("speb", "dpeb_radial", "dpeb_tangential", "ellipse_a", "ellipse_b", "ellipse_theta")}
    for n, J in enumerate(efims):
        b = performance_metrics(J, [ur[n], ut[n]])
        res["speb"][n] = b.speb
        res["dpeb_radial"][n], res["dpeb_tangential"][n] = b.dpeb_values
        res["ellipse_a"][n], res["ellipse_b"][n], res["ellipse_theta"][n] = b.ellipse
    res["dist_to_nearest_anchor"] = dist_near
    res["dist_to_reference"] = dist
    return res
