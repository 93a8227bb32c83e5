import numpy as np
import pytest

from coopbound.errors import ConvergenceError, InvalidParameterError
from coopbound.spectral import (NeighborStencil, asymptote_fit, characteristic_table, polar_grid,
                                potential_infinite, potential_profile, pseudo_characteristic)
from coopbound.topology import RadioParams

# potential kernel of the simple random walk on Z^2 (closed forms)
NEAREST_FOUR = {(1, 0): 1.0, (1, 1): 4 / np.pi, (2, 0): 4 - 8 / np.pi, (2, 2): 16 / (3 * np.pi)}


@pytest.mark.parametrize("x", list(NEAREST_FOUR))
def test_nearest_four_exact_values(x):
    P = potential_infinite(NeighborStencil.nearest_four(), x)
    np.testing.assert_allclose(P, NEAREST_FOUR[x] * np.eye(2), atol=5e-4)


def test_disk_domain_misses_the_corners():
    P = potential_infinite(NeighborStencil.nearest_four(), (1, 0), domain="disk")
    assert abs(P[0, 0] - 1.0) > 0.1


def test_characteristic_basics():
    st = NeighborStencil.from_radio(20.0, RadioParams(antennas_per_node=3))
    # |x|^2 <= 11.6 steps^2: squared norms 1, 2, 4, 5, 8, 9, 10
    assert len(st.offsets) == 4 + 4 + 4 + 8 + 4 + 4 + 8
    np.testing.assert_allclose(st.blocks.sum(axis=0), np.eye(2), atol=1e-14)
    s = pseudo_characteristic(st, np.zeros(2))
    np.testing.assert_allclose(s.phi, np.eye(2), atol=1e-14)
    th = np.array([[0.3, -1.1], [2.0, 0.5]])
    a = pseudo_characteristic(st, th)
    b = pseudo_characteristic(st, -th)
    np.testing.assert_allclose(a.phi, b.phi, atol=1e-14)
    np.testing.assert_allclose(a.phi, a.phi.transpose(0, 2, 1), atol=1e-14)
    # Sigma_2 depends only on the direction of theta
    np.testing.assert_allclose(pseudo_characteristic(st, 3 * th).sigma2, a.sigma2, atol=1e-14)
    # small-theta expansion: I - Phi ~ |theta|^2 Sigma_2 / 2
    t = 1e-3 * np.array([0.6, 0.8])
    s = pseudo_characteristic(st, t)
    np.testing.assert_allclose(np.eye(2) - s.phi, 0.5 * 1e-6 * s.sigma2, rtol=1e-5)


def test_potential_properties():
    st = NeighborStencil.from_radio(20.0, RadioParams(antennas_per_node=2))
    assert np.all(potential_infinite(st, (0, 0)) == 0)
    P = potential_infinite(st, np.array([[3, 0], [0, 3], [-3, 0]]))
    np.testing.assert_allclose(P[0], P[2], rtol=1e-10)
    # a quarter turn swaps the axes
    np.testing.assert_allclose(P[1], P[0][::-1, ::-1], rtol=1e-8, atol=1e-12)
    prof = potential_profile(st, np.arange(1, 30))
    assert np.all(np.diff(prof["p_eig_min"]) > 0)
    f = asymptote_fit(prof["dist"][4:], "log", y=prof["p_eig_max"][4:])
    assert f.r2 > 0.999


def test_residual_check():
    st = NeighborStencil.nearest_four()
    coarse = polar_grid(16, 16)
    with pytest.raises(ConvergenceError) as exc:
        potential_infinite(st, (5, 0), grid=coarse, rtol=1e-8)
    assert exc.value.partial.shape == (2, 2)
    potential_infinite(st, (2, 0), rtol=1e-2)


def test_grid_weights_integrate_area():
    assert polar_grid(domain="square").weights.sum() == pytest.approx(4 * np.pi ** 2, rel=1e-3)
    assert polar_grid(domain="disk").weights.sum() == pytest.approx(np.pi ** 3, rel=1e-3)
    with pytest.raises(InvalidParameterError):
        polar_grid(domain="hexagon")


def test_characteristic_table_shape():
    t = characteristic_table(NeighborStencil.nearest_four(), 9)
    assert set(t) == {"theta1", "theta2", "phi_xx", "phi_xy", "phi_yy"} and len(t["theta1"]) == 81
    np.testing.assert_allclose(t["phi_xx"], 0.5 * (np.cos(t["theta1"]) + np.cos(t["theta2"])), atol=1e-14)
    np.testing.assert_allclose(t["phi_xy"], 0.0, atol=1e-14)


@pytest.mark.parametrize("model,f", [("log", np.log), ("quadratic", np.square), ("sqrt", np.sqrt),
                                     ("linear", lambda d: d)])
def test_fit_recovers_models(model, f):
    d = np.linspace(10, 200, 30)
    r = asymptote_fit(np.column_stack([d, 2.5 * f(d) - 7.0]), model)
    assert r.slope == pytest.approx(2.5) and r.intercept == pytest.approx(-7.0) and r.r2 == pytest.approx(1.0)
    np.testing.assert_allclose(r.predict(d), 2.5 * f(d) - 7.0)


def test_fit_errors():
    with pytest.raises(InvalidParameterError):
        asymptote_fit(np.arange(1, 5.0), "log", y=np.ones(4))
    with pytest.raises(InvalidParameterError):
        asymptote_fit(np.arange(0, 10.0), "log", y=np.ones(10))
    with pytest.raises(InvalidParameterError):
        asymptote_fit(np.full(10, 3.0), "log", y=np.arange(10.0))
    with pytest.raises(InvalidParameterError):
        asymptote_fit(np.arange(1, 11.0), "cubic", y=np.arange(10.0))
