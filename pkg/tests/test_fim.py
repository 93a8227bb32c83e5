import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import i0e, i1e

from conftest import random_network, schur_efims
from coopbound.errors import InvalidParameterError, SingularNetworkError
from coopbound.estimators import ChannelParams
from coopbound.fim import (BlockMatrix, EfimSolver, agent_efim_direct, agent_efims, assemble_efim, bounds_table,
                           link_information, link_matrix, performance_metrics)
from coopbound.topology import NetworkTopology, RadioParams, connect_by_link_budget


def _fd_fim(topo, ch, h=1e-5):
    """Fisher information of RSS and bearing measurements by central differences."""
    agents = topo.agent_ids
    col = {int(a): k for k, a in enumerate(agents)}
    n = 2 * len(agents)
    kappa = ch.kappa
    ang_info = kappa * i1e(kappa) / i0e(kappa)
    F = np.zeros((n, n))

    def rss(p, q):
        return ch.mean_rss(np.hypot(*(p - q)))

    def bearing(p, q):
        d = p - q
        return np.arctan2(d[1], d[0])

    for i, j in topo.edges:
        for s, t in ((i, j), (j, i)):
            for f, info in ((rss, 1 / ch.sigma_rss ** 2), (bearing, ang_info)):
                g = np.zeros(n)
                for node in (s, t):
                    if int(node) not in col:
                        continue
                    for ax in range(2):
                        P = topo.positions.copy()
                        P[node, ax] += h
                        up = f(P[s], P[t])
                        P[node, ax] -= 2 * h
                        dn = f(P[s], P[t])
                        g[2 * col[int(node)] + ax] = (up - dn) / (2 * h)
                F += info * np.outer(g, g)
    return F


def test_finite_difference_fim():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-40, 40, (9, 2))
    is_anchor = np.zeros(9, bool)
    is_anchor[:2] = True
    ch = ChannelParams()
    topo = connect_by_link_budget(NetworkTopology(pts, is_anchor, np.empty((0, 2), int), 120.0),
                                  max_range=ch.max_range)
    J = assemble_efim(topo, ch).toarray()
    F = _fd_fim(topo, ch)
    np.testing.assert_allclose(J, F, rtol=1e-6, atol=1e-9 * np.abs(F).max())


def test_link_matrix_eigenstructure():
    r = RadioParams(antennas_per_node=3)
    li = link_information(r, (30.0, 40.0))
    w, V = np.linalg.eigh(li.matrix)
    np.testing.assert_allclose(sorted(w), sorted([9 * li.xi_r, 9 * li.xi_t]), rtol=1e-12)
    u = np.array([0.6, 0.8])
    np.testing.assert_allclose(li.matrix @ u, 9 * li.xi_r * u, rtol=1e-12)
    assert link_matrix(1.0, 5.0, 0.3, n_t=1)[0, 0] == pytest.approx(np.cos(0.3) ** 2)
    with pytest.raises(InvalidParameterError):
        link_information(r, (0.0, 0.0))


def test_close_pairs_are_clamped():
    r = RadioParams()
    np.testing.assert_allclose(r.link_intensities(0.01), r.link_intensities(1.0))
    assert r.link_intensities(2.0)[0] < r.link_intensities(1.0)[0]


def test_efim_structure(small_net):
    topo, radio = small_net
    E = assemble_efim(topo, radio)
    J = E.toarray()
    np.testing.assert_allclose(J, J.T, atol=1e-15 * np.abs(J).max())
    assert np.linalg.eigvalsh(J).min() > 0
    # diagonal blocks count anchor neighbours as well
    a = int(topo.agent_ids[0])
    nb = topo.neighbors(a)
    from coopbound.fim import link_matrices
    D = link_matrices(radio, topo.positions[nb] - topo.positions[a]).sum(axis=0)
    np.testing.assert_allclose(E.block(a, a), D, rtol=1e-12)
    b = int([k for k in nb if not topo.is_anchor[k]][0])
    np.testing.assert_allclose(E.block(a, b), -link_information(radio, topo.positions[b] - topo.positions[a]).matrix,
                               rtol=1e-12)
    aux = assemble_efim(topo, radio, "auxiliary").toarray()
    Q = np.tile(np.eye(2), (topo.n_nodes, 1))
    assert np.abs(aux @ Q).max() < 1e-12 * np.abs(aux).max()


@pytest.mark.parametrize("n_t", [1, 3])
def test_direct_matches_schur(n_t):
    topo, radio = random_network(11, 25, 4, n_t=n_t)
    E = assemble_efim(topo, radio)
    ref = schur_efims(topo, radio)
    got = agent_efims(E)
    np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-12 * np.abs(ref).max())
    sparse = EfimSolver(E, dense_limit=0)
    assert not sparse.dense and sparse.ok
    for k in (0, 7):
        i = int(topo.agent_ids[k])
        np.testing.assert_allclose(agent_efim_direct(E, i, sparse), ref[k], rtol=1e-8)


def test_singular_network_is_named():
    pts = np.array([[0.0, 0.0], [30.0, 0.0], [60.0, 0.0]])
    topo = NetworkTopology(pts, np.array([True, False, False]), np.empty((0, 2), int), 200.0)
    topo = connect_by_link_budget(topo, max_range=35.0)
    E = assemble_efim(topo, RadioParams(antennas_per_node=1))
    with pytest.raises(SingularNetworkError, match="range-only"):
        EfimSolver(E).solve(np.ones(4))
    pts2 = np.array([[0.0, 0.0], [30.0, 0.0], [500.0, 0.0], [530.0, 0.0]])
    t2 = connect_by_link_budget(NetworkTopology(pts2, np.array([True, False, False, False]),
                                                np.empty((0, 2), int), 1200.0), max_range=35.0)
    with pytest.raises(SingularNetworkError, match="contain no anchor"):
        EfimSolver(assemble_efim(t2, RadioParams())).solve(np.ones(6))


def test_metrics():
    J = np.array([[4.0, 0.0], [0.0, 1.0]])
    b = performance_metrics(J, [(1, 0), (0, 1), (1, 1)])
    assert b.speb == pytest.approx(1.25)
    np.testing.assert_allclose(b.dpeb_values, [0.25, 1.0, 0.625])
    assert b.ellipse[0] == pytest.approx(1.0) and b.ellipse[1] == pytest.approx(0.5)
    assert abs(abs(b.ellipse[2]) - np.pi / 2) < 1e-12
    r1 = performance_metrics(np.outer([1, 0], [1, 0]) * 3.0, [(1, 0), (0, 1)])
    assert r1.rank == 1 and r1.speb == np.inf
    assert r1.dpeb_values[0] == pytest.approx(1 / 3) and r1.dpeb_values[1] == np.inf


def test_bounds_table_reference():
    efims = np.array([np.diag([1.0, 4.0]), np.diag([2.0, 2.0])])
    pos = np.array([[10.0, 0.0], [0.0, 5.0]])
    t = bounds_table(efims, pos, np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(t["dpeb_radial"], [1.0, 0.5])
    np.testing.assert_allclose(t["dpeb_tangential"], [0.25, 0.5])
    t2 = bounds_table(efims, pos, np.array([[0.0, 0.0]]), reference=(10.0, 5.0))
    np.testing.assert_allclose(t2["dist_to_reference"], [5.0, 10.0])
    np.testing.assert_allclose(t2["dist_to_nearest_anchor"], [10.0, 5.0])
    np.testing.assert_allclose(t2["dpeb_radial"], [0.25, 0.5])


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(-200, 200), st.floats(-200, 200))
def test_bounds_invariant_under_rigid_motion(angle, tx, ty):
    topo, radio = random_network(3, 10, 3, n_t=2)
    base = agent_efims(assemble_efim(topo, radio))
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    moved = NetworkTopology(topo.positions @ R.T + [tx, ty], topo.is_anchor, topo.edges, topo.net_diameter)
    got = agent_efims(assemble_efim(moved, radio))
    np.testing.assert_allclose(np.trace(np.linalg.inv(got), axis1=1, axis2=2),
                               np.trace(np.linalg.inv(base), axis1=1, axis2=2), rtol=1e-8)
    np.testing.assert_allclose(got, R @ base @ R.T, rtol=1e-7, atol=1e-12 * np.abs(base).max())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_more_links_never_hurt(seed):
    topo, radio = random_network(seed, 10, 2, n_t=3, box=120.0)
    full = agent_efims(assemble_efim(topo, radio))
    # drop one agent-agent link; bounds may only grow
    e = topo.edges
    aa = np.flatnonzero(~topo.is_anchor[e[:, 0]] & ~topo.is_anchor[e[:, 1]])
    keep = np.ones(len(e), bool)
    keep[aa[seed % len(aa)]] = False
    thin = NetworkTopology(topo.positions, topo.is_anchor, e[keep], topo.net_diameter)
    part = agent_efims(assemble_efim(thin, radio))
    for A, B in zip(full, part):
        assert np.linalg.eigvalsh(A - B).min() > -1e-9 * np.abs(A).max()
