"""Pseudo-random-walk view of the EFIM.

Transition operators ``T = D^-1 A``, the efficiency-of-cooperation series,
hitting pseudo-probabilities, the finite-network potential kernel and the
reduced-complexity network objective built on it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import ConvergenceError, InvalidParameterError, SingularNetworkError, SingularNPIError
from .fim import BlockMatrix, EfimSolver, block_csr, edge_link_matrices
from .topology import NetworkTopology

I2 = np.eye(2)
MODES = ("agents-only", "extended", "auxiliary")


def _inv2(a):
    """Closed-form inverse of a stack of 2x2 matrices."""
    a = np.asarray(a, dtype=float)
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    out = np.empty_like(a)
    out[..., 0, 0] = a[..., 1, 1]
    out[..., 1, 1] = a[..., 0, 0]
    out[..., 0, 1] = -a[..., 0, 1]
    out[..., 1, 0] = -a[..., 1, 0]
    return out / det[..., None, None]


def _blocks_to_matrix(b):
    """(k, m, 2, 2) block array to a (2k, 2m) matrix."""
    k, m = b.shape[:2]
    return b.transpose(0, 2, 1, 3).reshape(2 * k, 2 * m)


def _matrix_to_blocks(a):
    k, m = a.shape[0] // 2, a.shape[1] // 2
    return a.reshape(k, 2, m, 2).transpose(0, 2, 1, 3)


@dataclass(frozen=True)
class TransitionOperator:
    """Block pseudo-transition matrix over an ordered node list.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix, shape (2n, 2n)
    nodes : ndarray of int
        Node id of each block row. Agents come first, then anchors.
    n_agents : int
    npi : ndarray, shape (n, 2, 2)
        ``D`` blocks of the listed nodes (all neighbours counted).
    efim : scipy.sparse.csr_matrix
        The symmetric matrix ``D - A`` the operator was derived from; for the
        extended operator this is the original agent EFIM.
    mode : str
    """

    matrix: sp.csr_matrix
    nodes: np.ndarray
    n_agents: int
    npi: np.ndarray
    efim: sp.csr_matrix
    mode: str
    positions: Optional[np.ndarray] = None

    @property
    def n_blocks(self) -> int:
        return len(self.nodes)

    def position(self, node: int) -> int:
        hit = np.flatnonzero(self.nodes == node)
        if len(hit) == 0:
            raise InvalidParameterError(f"node {node} is not in this operator")
        return int(hit[0])

    def block(self, a: int, b: int) -> np.ndarray:
        p, q = self.position(a), self.position(b)
        return self.matrix[2 * p:2 * p + 2, 2 * q:2 * q + 2].toarray()

    def as_block_matrix(self) -> BlockMatrix:
        return BlockMatrix(self.matrix, self.nodes, meta={"mode": self.mode})

    def row_sums(self) -> np.ndarray:
        """Block-row sums, shape (n, 2, 2)."""
        s = self.matrix @ np.tile(I2, (self.n_blocks, 1))
        return s.reshape(self.n_blocks, 2, 2)

    @classmethod
    def from_links(cls, n_nodes: int, edges, links, is_anchor, mode: str = "auxiliary", positions=None):
        """Build from an explicit link list (periodic or synthetic geometries).

        Parameters
        ----------
        n_nodes : int
        edges : (E, 2) int array
        links : (E, 2, 2) link matrices ``J_ij``
        is_anchor : (n_nodes,) bool
        mode : {"agents-only", "extended", "auxiliary"}
        positions : (n_nodes, 2) array, optional
        """
        if mode not in MODES:
            raise InvalidParameterError(f"unknown mode {mode!r}")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        links = np.asarray(links, dtype=float).reshape(-1, 2, 2)
        is_anchor = np.asarray(is_anchor, dtype=bool)
        D = np.zeros((n_nodes, 2, 2))
        np.add.at(D, edges[:, 0], links)
        np.add.at(D, edges[:, 1], links)
        agents = np.flatnonzero(~is_anchor)
        anchors = np.flatnonzero(is_anchor)
        nodes = agents if mode == "agents-only" else np.concatenate([agents, anchors])
        rows_live = np.ones(n_nodes, bool) if mode == "auxiliary" else ~is_anchor
        _check_npi(D, np.flatnonzero(rows_live))

        pos = np.full(n_nodes, -1, np.int64)
        pos[nodes] = np.arange(len(nodes))
        r = np.concatenate([edges[:, 0], edges[:, 1]])
        c = np.concatenate([edges[:, 1], edges[:, 0]])
        JJ = np.concatenate([links, links])
        # transition blocks leave every live row; agents-only drops anchor columns
        keep = rows_live[r] & (pos[c] >= 0)
        r, c, JJ = r[keep], c[keep], JJ[keep]
        Dinv = np.zeros_like(D)
        live = np.flatnonzero(rows_live)
        Dinv[live] = _inv2(D[live])
        blocks = np.einsum("kab,kbc->kac", Dinv[r], JJ)
        diag = None
        if mode == "extended":
            diag = np.zeros((len(nodes), 2, 2))
            diag[len(agents):] = I2
        T = block_csr(len(nodes), pos[r], pos[c], blocks, diag=diag)

        # symmetric companion D - A over the same rows
        if mode == "auxiliary":
            eroot = np.ones(len(edges), bool)
            sub = nodes
        else:
            eroot = ~(is_anchor[edges[:, 0]] | is_anchor[edges[:, 1]])
            sub = agents
        spos = np.full(n_nodes, -1, np.int64)
        spos[sub] = np.arange(len(sub))
        ee, LL = edges[eroot], links[eroot]
        J = block_csr(len(sub), np.concatenate([spos[ee[:, 0]], spos[ee[:, 1]]]),
                      np.concatenate([spos[ee[:, 1]], spos[ee[:, 0]]]),
                      -np.concatenate([LL, LL]), diag=D[sub])
        pos_out = None if positions is None else np.asarray(positions, float)[nodes]
        return cls(T, nodes, len(agents), D[nodes], J, mode, pos_out)


def _check_npi(D, rows):
    if len(rows) == 0:
        return
    d = D[rows]
    det = d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]
    tr = d[:, 0, 0] + d[:, 1, 1]
    bad = (tr <= 0) | (det <= 1e-12 * tr * tr)
    if np.any(bad):
        k = rows[np.flatnonzero(bad)[0]]
        why = "isolated node" if tr[np.flatnonzero(bad)[0]] <= 0 else "neighbours give rank-deficient information"
        raise SingularNPIError(f"NPI of node {int(k)} is singular ({why})")


def transition_operator(topo: NetworkTopology, radio, mode: str = "agents-only") -> TransitionOperator:
    """Pseudo-transition operator of a network.

    ``agents-only`` gives ``T = D^-1 A`` over agents (rows sum to less than I
    where anchors are adjacent), ``extended`` appends absorbing anchor rows, and
    ``auxiliary`` treats anchors as agents.
    """
    links = edge_link_matrices(topo, radio)
    return TransitionOperator.from_links(topo.n_nodes, topo.edges, links, topo.is_anchor, mode,
                                         topo.positions)


def pseudo_transition_power(T: TransitionOperator, n: int) -> BlockMatrix:
    """The n-step pseudo-transition blocks ``T^(n)`` as a block matrix."""
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    m = T.matrix
    out = m.copy()
    dense = False
    for _ in range(n - 1):
        out = out @ m
        if not dense and sp.issparse(out) and out.nnz > 0.3 * out.shape[0] ** 2:
            out = out.toarray()
            m = m.toarray()
            dense = True
    return BlockMatrix(out, T.nodes, meta={"mode": T.mode, "power": n})


# ---------------------------------------------------------------------------
# efficiency of cooperation


@dataclass(frozen=True)
class EocDecomposition:
    """Decomposition ``EFIM_i = D_i (I + Delta_i)^-1`` of one agent."""

    node: int
    npi: np.ndarray
    delta: np.ndarray
    eoc: np.ndarray
    hitting: np.ndarray
    truncation_n: int
    truncation_residual: float
    delta_exact: Optional[np.ndarray] = None

    @property
    def efim(self) -> np.ndarray:
        return self.npi @ self.eoc

    def as_record(self) -> dict:
        rec = {"node": int(self.node), "npi": self.npi.tolist(), "delta": self.delta.tolist(),
               "eoc": self.eoc.tolist(), "hitting": self.hitting.tolist(),
               "truncation_n": int(self.truncation_n),
               "truncation_residual": float(self.truncation_residual)}
        if self.delta_exact is not None:
            rec["delta_exact"] = self.delta_exact.tolist()
        return rec


def _agent_part(T: TransitionOperator):
    if T.mode == "auxiliary":
        raise InvalidParameterError("the series needs absorbing anchors; use agents-only or extended")
    k = 2 * T.n_agents
    return sp.csr_matrix(T.matrix[:k, :k])


def _series_doubling(A, tol: float, max_doublings: int = 48):
    """Partial sums ``sum_{n=1}^{2^k - 1} A^n`` by repeated squaring.

    ``S_{2m} = S_m + A^m S_m`` doubles the number of summed terms per step, so
    slowly mixing walks (spectral radius near one) need only ``log2`` steps.
    Stops when every block row of the latest chunk of ``2^k`` terms has
    spectral norm below ``tol``; later chunks then shrink at least as fast.

    Returns
    -------
    diag : (m, 2, 2) diagonal blocks of the partial sum (the ``Delta`` values)
    n_terms : int
    chunk : (m,) block-row norms of the last chunk
    converged : bool
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    m2 = A.shape[0]
    m = m2 // 2
    S = np.eye(m2)           # sum_{n=0}^{2^k - 1} A^n
    P = A.copy()             # A^{2^k}
    chunk = np.full(m, np.inf)
    converged = False
    k = 0
    for k in range(max_doublings):
        nxt = P @ S          # terms 2^k .. 2^{k+1} - 1
        S += nxt
        rows = nxt.reshape(m, 2, m2)
        chunk = np.linalg.norm(rows, ord=2, axis=(1, 2))
        if np.all(chunk < tol):
            converged = True
            break
        P = P @ P
    Sb = S.reshape(m, 2, m, 2)[np.arange(m), :, np.arange(m), :]
    return Sb - I2, 2 ** (k + 1) - 1, chunk, converged


def _doubling_cached(T: TransitionOperator, tol: float):
    cache = T.__dict__.get("_doubling")
    if cache is None or cache[0] > tol:
        res = _series_doubling(_agent_part(T), tol)
        cache = (tol, res)
        object.__setattr__(T, "_doubling", cache)
    return cache[1]


def _from_doubling(T, p, tol):
    diag, n_terms, chunk, ok = _doubling_cached(T, tol)
    return diag[p].copy(), n_terms, float(chunk[p]), ok


def eoc_decomposition(T: TransitionOperator, i: int, tol: float = 1e-10,
                      max_iter: int = 100_000, exact: bool = True,
                      method: str = "auto") -> EocDecomposition:
    """Coupling term ``Delta_i = sum_{n>=1} [T^n]_ii`` by direct summation.

    Parameters
    ----------
    T : TransitionOperator
        ``agents-only`` or ``extended`` operator.
    i : int
        Node id of the agent.
    tol : float
        Summation stops once the newest term, and the geometric estimate of
        the remaining tail, have spectral norm below ``tol``.
    max_iter : int
        Cap on terms for term-by-term summation.
    exact : bool
        Also compute ``Delta_i* = [J_e^-1]_ii D_i - I`` by a direct solve.
    method : {"auto", "sequential", "doubling"}
        ``sequential`` adds one term at a time (compiled kernel). ``doubling``
        sums ``2^k - 1`` terms by repeated squaring of the dense operator.
        ``auto`` tries the first and switches to the second for slowly mixing
        networks of moderate size.

    Raises
    ------
    ConvergenceError
        When the cap is hit; ``partial`` holds the decomposition so far.
    """
    p = T.position(i)
    if p >= T.n_agents:
        raise InvalidParameterError(f"node {i} is an anchor")
    if method not in ("auto", "sequential", "doubling"):
        raise InvalidParameterError(f"unknown method {method!r}")
    A = _agent_part(T)
    if method == "doubling":
        delta, n_used, resid, converged = _from_doubling(T, p, tol)
    else:
        cap = max_iter if method == "sequential" or T.n_agents > 1500 else min(max_iter, 1_000)
        delta, n_used, resid, converged = _kernels.diag_series(A.indptr, A.indices, A.data, p, tol, cap)
        if not converged and method == "auto" and T.n_agents <= 1500:
            delta, n_used, resid, converged = _from_doubling(T, p, tol)
    D = T.npi[p]
    d_exact = None
    if exact:
        solver = T.__dict__.get("_solver")
        if solver is None:
            solver = EfimSolver(BlockMatrix(T.efim))
            object.__setattr__(T, "_solver", solver)
        rhs = np.zeros((2 * T.n_agents, 2))
        rhs[2 * p, 0] = rhs[2 * p + 1, 1] = 1.0
        x = solver.solve(rhs)[2 * p:2 * p + 2]
        d_exact = x @ D - I2
    eoc = np.linalg.inv(I2 + delta)
    out = EocDecomposition(int(i), D.copy(), delta, eoc, I2 - eoc, int(n_used), float(resid), d_exact)
    if not converged:
        raise ConvergenceError(f"series for node {i} not converged after {n_used} terms "
                               f"(residual {resid:.3g})", partial=out)
    return out


# ---------------------------------------------------------------------------
# hitting pseudo-probabilities by absorption


@dataclass(frozen=True)
class HittingSet:
    """Hitting pseudo-probabilities ``F_S(source, j)`` for ``j`` in ``targets``.

    ``blocks[k]`` is the 2x2 block for ``targets[k]``; ``full`` optionally holds
    the complete ``F_SS`` array of shape (|S|, |S|, 2, 2).
    """

    source: int
    targets: np.ndarray
    blocks: np.ndarray
    full: Optional[np.ndarray] = None

    def block(self, j: int) -> np.ndarray:
        k = np.flatnonzero(self.targets == j)
        if len(k) == 0:
            raise InvalidParameterError(f"node {j} not in the target set")
        return self.blocks[int(k[0])]

    def total(self) -> np.ndarray:
        return self.blocks.sum(axis=0)


def hitting_direct(T: TransitionOperator, source: int, targets: Sequence[int]) -> HittingSet:
    """First-passage pseudo-probabilities into ``targets`` by a linear solve.

    Walks start at ``source``, take at least one step and stop at the first
    visit to the target set; walks leaving the operator's node set are lost.
    """
    targets = np.asarray(targets, dtype=np.int64)
    tpos = np.array([T.position(t) for t in targets])
    p = T.position(source)
    n2 = 2 * T.n_blocks
    cols = np.concatenate([[2 * q, 2 * q + 1] for q in tpos])
    m = sp.csc_matrix(T.matrix)
    mask = np.ones(n2)
    mask[cols] = 0.0
    Tk = m @ sp.diags(mask)
    rhs = m[:, cols].toarray()
    x = spla.splu(sp.csc_matrix(sp.identity(n2) - Tk)).solve(rhs)
    row = x[2 * p:2 * p + 2]
    blocks = np.stack([row[:, 2 * k:2 * k + 2] for k in range(len(targets))])
    return HittingSet(int(source), targets, blocks)


def return_pseudo_probability(T: TransitionOperator, i: int) -> np.ndarray:
    """``F_ii``: pseudo-probability of returning to ``i`` (by absorption)."""
    return hitting_direct(T, i, [i]).blocks[0]


# ---------------------------------------------------------------------------
# potential kernel


def translation_basis(n: int) -> np.ndarray:
    """``Q``: n stacked 2x2 identities, shape (2n, 2)."""
    return np.tile(I2, (n, 1))


def rotation_vector(positions) -> np.ndarray:
    """Infinitesimal rotation about the centroid, flattened to length 2n."""
    p = np.asarray(positions, float) - np.mean(positions, axis=0)
    return np.column_stack([-p[:, 1], p[:, 0]]).ravel()


class PotentialKernel:
    """Finite-network potential kernel ``P_ab`` of an auxiliary operator.

    With ``W = Q (Q^T D Q)^-1 Q^T D`` the limit of ``T^n``, the fundamental
    matrix ``X = (I - T + W)^-1`` gives ``P_ab = X_aa D_a^-1 D_b - X_ab``.
    Writing ``X = G D`` with the symmetric ``G = (J + D Q (Q^T D Q)^-1 Q^T D)^-1``
    reduces this to ``P_ab = (G_aa - G_ab) D_b``, which is what is evaluated.
    Columns of ``G`` are computed on demand from one sparse factorization;
    ``dense=True`` forms ``G`` completely.
    """

    def __init__(self, T_aux: TransitionOperator, dense: Optional[bool] = None):
        if T_aux.mode != "auxiliary":
            raise InvalidParameterError("potential kernel needs the auxiliary operator")
        self.T = T_aux
        self.nodes = T_aux.nodes
        n = T_aux.n_blocks
        self.n = n
        D = T_aux.npi
        self.D = D
        J = sp.csr_matrix(T_aux.efim)
        if T_aux.positions is not None and n > 1:
            v = rotation_vector(T_aux.positions)
            if np.linalg.norm(J @ v) <= 1e-9 * spla.norm(J) * np.linalg.norm(v):
                raise InvalidParameterError("range-only (N_t = 1) auxiliary networks have a rotational "
                                            "null space; use direct inversion instead")
        U = _blocks_to_matrix(D[:, None])
        Sinv = D.sum(axis=0)
        S = np.linalg.inv(Sinv)
        if dense is None:
            dense = n <= 600
        self.dense = dense
        self._cols = {}
        self.G = None
        if dense:
            M = J.toarray() + U @ S @ U.T
            M = 0.5 * (M + M.T)
            try:
                cho = sla.cho_factor(M, lower=True)
            except sla.LinAlgError:
                raise SingularNetworkError("auxiliary network is not rigid beyond translations "
                                           "(range-only links or disconnected graph)") from None
            G = sla.cho_solve(cho, np.eye(2 * n))
            self.G = 0.5 * (G + G.T)
        else:
            # bordered system [[J, U], [U^T, -S^-1]] has G in its leading block
            K = sp.bmat([[J, sp.csr_matrix(U)], [sp.csr_matrix(U.T), sp.csr_matrix(-Sinv)]], format="csc")
            self._lu = spla.splu(K)

    def columns(self, p: int) -> np.ndarray:
        """Block column ``p`` of ``G``, shape (2n, 2)."""
        if self.G is not None:
            return self.G[:, 2 * p:2 * p + 2]
        if p not in self._cols:
            rhs = np.zeros((2 * self.n + 2, 2))
            rhs[2 * p, 0] = rhs[2 * p + 1, 1] = 1.0
            self._cols[p] = self._lu.solve(rhs)[:2 * self.n]
        return self._cols[p]

    def g_block(self, p: int, q: int) -> np.ndarray:
        return self.columns(q)[2 * p:2 * p + 2]

    def block_pos(self, p: int, q: int) -> np.ndarray:
        """``P`` block by block position (not node id)."""
        if p == q:
            return np.zeros((2, 2))
        return (self.g_block(p, p) - self.g_block(p, q)) @ self.D[q]

    def block(self, a: int, b: int) -> np.ndarray:
        """``P_ab`` for node ids ``a`` and ``b``."""
        return self.block_pos(self.T.position(a), self.T.position(b))

    def restricted(self, nodes: Sequence[int]) -> np.ndarray:
        """``P_S`` as a (2k, 2k) matrix for the node list ``S``."""
        pos = [self.T.position(a) for a in nodes]
        k = len(pos)
        out = np.zeros((k, k, 2, 2))
        for r, p in enumerate(pos):
            for c, q in enumerate(pos):
                if r != c:
                    out[r, c] = self.block_pos(p, q)
        return _blocks_to_matrix(out)

    def npi_of(self, nodes: Sequence[int]) -> np.ndarray:
        return self.D[[self.T.position(a) for a in nodes]]

    def full(self) -> np.ndarray:
        """All blocks as a (2n, 2n) matrix (dense kernels only)."""
        if self.G is None:
            raise InvalidParameterError("full() needs a dense kernel")
        n = self.n
        Gb = _matrix_to_blocks(self.G)
        diag = Gb[np.arange(n), np.arange(n)]
        P = np.einsum("abij,bjk->abik", diag[:, None] - Gb, self.D)
        P[np.arange(n), np.arange(n)] = 0.0
        return _blocks_to_matrix(P)


def potential_kernel_finite(T_aux: TransitionOperator, dense: Optional[bool] = None) -> PotentialKernel:
    """Potential kernel of a finite auxiliary network (N_t >= 2 only).

    Parameters
    ----------
    T_aux : TransitionOperator
        Auxiliary operator; when it carries positions, range-only networks
        are rejected up front.
    dense : bool, optional
        Force full (dense) or on-demand (sparse) evaluation of ``G``.
    """
    return PotentialKernel(T_aux, dense)


def potential_kernel_fundamental(T_aux: TransitionOperator) -> np.ndarray:
    """Reference evaluation through ``X = (I - T + W)^-1`` (dense, small networks)."""
    n = T_aux.n_blocks
    D = T_aux.npi
    Q = translation_basis(n)
    Dm = sla.block_diag(*D)
    W = Q @ np.linalg.solve(Q.T @ Dm @ Q, Q.T @ Dm)
    X = np.linalg.inv(np.eye(2 * n) - T_aux.matrix.toarray() + W)
    Xb = _matrix_to_blocks(X)
    Dinv = _inv2(D)
    diag = Xb[np.arange(n), np.arange(n)]
    P = np.einsum("aij,ajk,bkl->abil", diag, Dinv, D) - Xb
    P[np.arange(n), np.arange(n)] = 0.0
    return _blocks_to_matrix(P)


def hitting_matrix(P_S: np.ndarray, D_S: np.ndarray, simplified: Optional[bool] = None) -> np.ndarray:
    """``F_SS`` from the restricted potential kernel, shape (k, k, 2, 2).

    ``F_SS = I + K - K Q (Q^T D_S K Q)^-1 Q^T D_S K`` with ``K = P_S^-1``. When
    all ``D`` blocks are equal and ``P_S`` is symmetric, the normalization
    reduces to ``(Q^T K Q)^-1`` (``simplified``).
    """
    D_S = np.asarray(D_S, float).reshape(-1, 2, 2)
    k = len(D_S)
    P_S = np.asarray(P_S, float)
    try:
        K = np.linalg.inv(P_S)
    except np.linalg.LinAlgError:
        raise SingularNetworkError("restricted potential kernel is singular (degenerate anchor geometry)") from None
    if not np.all(np.isfinite(K)) or np.linalg.cond(P_S) > 1e14:
        raise SingularNetworkError("restricted potential kernel is singular (degenerate anchor geometry)")
    Q = translation_basis(k)
    if simplified is None:
        simplified = bool(np.allclose(D_S, D_S[0], rtol=1e-12, atol=0)
                          and np.allclose(P_S, P_S.T, rtol=1e-10, atol=1e-12 * np.abs(P_S).max()))
    if simplified:
        F = np.eye(2 * k) + K - K @ Q @ np.linalg.solve(Q.T @ K @ Q, Q.T @ K)
    else:
        DK = _blocks_to_matrix(np.einsum("aij,abjk->abik", D_S, _matrix_to_blocks(K)))
        F = np.eye(2 * k) + K - K @ Q @ np.linalg.solve(Q.T @ DK @ Q, Q.T @ DK)
    return _matrix_to_blocks(F)


def hitting_from_potential(P_S: np.ndarray, D_S: np.ndarray, nodes: Optional[Sequence[int]] = None,
                           source: int = 0, simplified: Optional[bool] = None) -> HittingSet:
    """Hitting pseudo-probabilities from ``source`` into ``S`` via the potential kernel.

    Parameters
    ----------
    P_S : (2k, 2k) array
        Potential kernel restricted to ``S``.
    D_S : (k, 2, 2) array
    nodes : sequence of int, optional
        Node ids of ``S`` (default ``0..k-1``).
    source : int
        Node id (an element of ``nodes``) of the walk's start.
    """
    F = hitting_matrix(P_S, D_S, simplified)
    nodes = np.arange(F.shape[0]) if nodes is None else np.asarray(nodes, np.int64)
    r = int(np.flatnonzero(nodes == source)[0])
    return HittingSet(int(source), nodes, F[r].copy(), F)


def routing_hitting(kernel: PotentialKernel, i: int, anchors: Sequence[int]) -> HittingSet:
    """``F_{R_i}(i, .)`` for ``R_i = {i} + anchors`` from a kernel."""
    S = [int(i)] + [int(a) for a in anchors]
    return hitting_from_potential(kernel.restricted(S), kernel.npi_of(S), S, int(i))


def efim_via_routing(i: int, hitting: HittingSet, D_i: np.ndarray) -> np.ndarray:
    """``sum_j D_i F(i, j)`` over the anchors of the routing set."""
    mask = hitting.targets != i
    return D_i @ hitting.blocks[mask].sum(axis=0)


def return_via_potential(kernel: PotentialKernel, i: int, j: int) -> np.ndarray:
    """``F_ii`` of the auxiliary network from the two-point set ``{i, j}``.

    A walk from i first hits {i, j}; from j it keeps returning to j until it
    reaches i, so ``F_ii = F(i,i) + F(i,j) (I - F(j,j))^-1 F(j,i)``.
    """
    F = hitting_from_potential(kernel.restricted([i, j]), kernel.npi_of([i, j]), [i, j], i).full
    return F[0, 0] + F[0, 1] @ np.linalg.solve(I2 - F[1, 1], F[1, 0])


# ---------------------------------------------------------------------------
# reduced-complexity network objective


class FastObjective:
    """Total SPEB of one network sample through the potential kernel.

    The kernel depends only on node positions and links, so it is computed
    once per sample; each evaluation for a given anchor set then costs
    O(N_a N_b^2 + N_b^3).
    """

    def __init__(self, topo: NetworkTopology, radio):
        self.topo = topo
        T = transition_operator(topo, radio, "auxiliary")
        self.kernel = potential_kernel_finite(T, dense=True)
        n = self.kernel.n
        Gb = _matrix_to_blocks(self.kernel.G)
        self._Gb = Gb
        self._Gdiag = Gb[np.arange(n), np.arange(n)].copy()
        self._pos = np.full(topo.n_nodes, -1, np.int64)
        self._pos[T.nodes] = np.arange(n)

    def per_agent_efim(self, anchor_ids: Optional[Sequence[int]] = None):
        """Per-agent EFIMs (agent ids, (N_a, 2, 2)) for the given anchor set."""
        topo = self.topo
        if anchor_ids is None:
            anchor_ids = topo.anchor_ids
        anchor_ids = np.asarray(anchor_ids, np.int64)
        if len(anchor_ids) == 0:
            raise SingularNetworkError("network has no anchors")
        is_anc = np.zeros(topo.n_nodes, bool)
        is_anc[anchor_ids] = True
        agents = np.flatnonzero(~is_anc)
        a = self._pos[agents]
        b = self._pos[anchor_ids]
        D = self.kernel.D
        Gb, Gd = self._Gb, self._Gdiag
        nb = len(b)
        # anchor block P_B and its inverse, shared by all agents
        PB = np.einsum("pqij,qjk->pqik", Gd[b][:, None] - Gb[np.ix_(b, b)], D[b])
        PB[np.arange(nb), np.arange(nb)] = 0.0
        PBm = _blocks_to_matrix(PB)
        if nb == 1:
            # P_B is the zero block; route each agent through {i, anchor}
            out = np.empty((len(agents), 2, 2))
            for k, i in enumerate(agents):
                h = routing_hitting(self.kernel, int(i), anchor_ids)
                out[k] = efim_via_routing(int(i), h, D[a[k]])
            return agents, 0.5 * (out + out.transpose(0, 2, 1))
        PBinv = np.linalg.inv(PBm)
        # P_{iB} and P_{Bi} for every agent
        PiB = np.einsum("apij,pjk->apik", Gd[a][:, None] - Gb[np.ix_(a, b)], D[b])
        PBi = np.einsum("paij,ajk->paik", Gd[b][:, None] - Gb[np.ix_(b, a)], D[a])
        PiBm = PiB.transpose(0, 2, 1, 3).reshape(len(a), 2, 2 * nb)
        PBim = PBi.transpose(1, 0, 2, 3).reshape(len(a), 2 * nb, 2)
        # partitioned inverse of [[0, PiB], [PBi, PB]]
        X = PiBm @ PBinv                       # (Na, 2, 2nb)
        Y = PBinv @ PBim                       # (Na, 2nb, 2)
        s = -(X @ PBim)                        # Schur complement of P_B
        sinv = _inv2(s)
        K_ii = sinv
        K_iB = -sinv @ X
        K_Bi = -Y @ sinv
        K_BB = PBinv[None] + Y @ sinv @ X
        # F_ii = I + K_ii - r Z^-1 c with r = sum_j K_ij, c = sum_j D_j K_ji
        Dblk = D[b]
        r_ = K_ii + K_iB.reshape(len(a), 2, nb, 2).sum(axis=2)
        Da = D[a]
        K_Bi_b = K_Bi.reshape(len(a), nb, 2, 2)
        c_ = Da @ K_ii + np.einsum("pij,apjk->aik", Dblk, K_Bi_b)
        # Z = sum_{u,v} D_u K_uv
        K_iB_b = K_iB.reshape(len(a), 2, nb, 2)
        K_BB_b = K_BB.reshape(len(a), nb, 2, nb, 2)
        Z = (Da @ K_ii + Da @ K_iB_b.sum(axis=2)
             + np.einsum("pij,apjk->aik", Dblk, K_Bi_b)
             + np.einsum("pij,apjqk->aik", Dblk, K_BB_b))
        one_minus_F = -K_ii + r_ @ np.linalg.solve(Z, c_)
        efim = Da @ one_minus_F
        return agents, 0.5 * (efim + efim.transpose(0, 2, 1))

    def __call__(self, anchor_ids: Optional[Sequence[int]] = None) -> float:
        _, J = self.per_agent_efim(anchor_ids)
        return float(np.trace(_inv2(J), axis1=1, axis2=2).sum())


def naive_objective_single(topo: NetworkTopology, radio, anchor_ids: Optional[Sequence[int]] = None) -> float:
    """``tr(J_e^-1)`` by dense inversion of the full agent EFIM."""
    from .fim import assemble_efim

    if anchor_ids is not None:
        topo = topo.relabel(anchor_ids)
    J = assemble_efim(topo, radio).toarray()
    return float(np.trace(np.linalg.inv(J)))


def fast_network_objective(samples: Sequence[NetworkTopology], radio, prepared: Optional[Sequence[FastObjective]] = None,
                           anchor_sets: Optional[Sequence] = None) -> float:
    """Sample mean of the total SPEB via the potential kernel.

    Parameters
    ----------
    samples : list of NetworkTopology
        Connected network samples with anchors labelled.
    radio : RadioParams
        Must have N_t >= 2.
    prepared : list of FastObjective, optional
        Kernels already computed for the samples (reused across evaluations).
    anchor_sets : list, optional
        Anchor ids per sample; default is each sample's labelling.
    """
    if getattr(radio, "n_t", 2) < 2:
        raise InvalidParameterError("the potential-kernel objective needs N_t >= 2")
    if prepared is None:
        prepared = [FastObjective(t, radio) for t in samples]
    tot = 0.0
    for k, obj in enumerate(prepared):
        tot += obj(None if anchor_sets is None else anchor_sets[k])
    return tot / len(prepared)


def naive_network_objective(samples: Sequence[NetworkTopology], radio, anchor_sets: Optional[Sequence] = None) -> float:
    """Sample mean of ``tr(J_e^-1)`` by full inversion."""
    tot = 0.0
    for k, t in enumerate(samples):
        tot += naive_objective_single(t, radio, None if anchor_sets is None else anchor_sets[k])
    return tot / len(samples)
