import numpy as np
import pytest

from coopbound.topology import NetworkTopology, RadioParams, connect_by_link_budget


def random_network(seed, n_agents, n_anchors, n_t=3, box=140.0, radio=None):
    """Uniform nodes in a square, redrawn until connected; anchors come last."""
    rng = np.random.default_rng(seed)
    radio = radio or RadioParams(antennas_per_node=n_t)
    while True:
        n = n_agents + n_anchors
        pts = rng.uniform(-box / 2, box / 2, size=(n, 2))
        is_anchor = np.zeros(n, bool)
        is_anchor[n_agents:] = True
        topo = NetworkTopology(pts, is_anchor, np.empty((0, 2), int), box * np.sqrt(2))
        topo = connect_by_link_budget(topo, radio)
        deg = np.bincount(topo.edges.ravel(), minlength=n)
        if topo.connected and deg.min() >= 3:
            return topo, radio


def schur_efims(topo, radio):
    """Per-agent EFIMs by dense inversion of the full agent EFIM."""
    from coopbound.fim import assemble_efim

    J = assemble_efim(topo, radio).toarray()
    Jinv = np.linalg.inv(J)
    n = J.shape[0] // 2
    return np.array([np.linalg.inv(Jinv[2 * k:2 * k + 2, 2 * k:2 * k + 2]) for k in range(n)])


@pytest.fixture
def small_net():
    return random_network(7, 12, 3, n_t=3)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
