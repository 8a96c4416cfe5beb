import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgdiag.timegrid import TimeGrid, apply_time_derivative, fd_weights, interpolate


def test_symmetric_grid_nodes():
    g = TimeGrid.symmetric(2.0, 0.5)
    np.testing.assert_allclose(g.values, [-2, -1.5, -1, -0.5, 0, 0.5, 1, 1.5, 2])
    assert g.dt == pytest.approx(0.5)
    assert g.index_of(0.0) == 4


def test_index_of_rejects_off_node():
    g = TimeGrid.symmetric(2.0, 0.5)
    with pytest.raises(ValueError):
        g.index_of(0.25)
    with pytest.raises(ValueError):
        g.index_of(3.0)


def test_degenerate_grid_rejected():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 5)


def test_fd_weights_classic_central():
    np.testing.assert_allclose(fd_weights(np.array([-1.0, 0.0, 1.0]), 0.0, 1), [-0.5, 0, 0.5])
    np.testing.assert_allclose(fd_weights(np.array([-1.0, 0.0, 1.0]), 0.0, 2), [1, -2, 1])
    np.testing.assert_allclose(fd_weights(np.arange(-2.0, 3.0), 0.0, 1), [1 / 12, -2 / 3, 0, 2 / 3, -1 / 12])


@pytest.mark.parametrize("order", [4, 8])
def test_derivative_of_sine(order):
    t = np.linspace(-3, 3, 601)
    d = apply_time_derivative(np.sin(t), t[1] - t[0], order=order)
    err = np.max(np.abs(d - np.cos(t)))
    assert err < (1e-8 if order == 4 else 1e-11)


def test_derivative_of_constant_is_exactly_zero():
    data = np.full((40, 3, 3), 1.2345 + 0.5j)
    assert np.all(apply_time_derivative(data, 0.1) == 0)


def test_second_derivative():
    t = np.linspace(0, 2, 401)
    d2 = apply_time_derivative(np.exp(t), t[1] - t[0], order=8, deriv=2)
    np.testing.assert_allclose(d2, np.exp(t), rtol=1e-8)


def test_stencil_needs_enough_samples():
    with pytest.raises(ValueError):
        apply_time_derivative(np.zeros(5), 0.1, order=8)
    with pytest.raises(ValueError):
        apply_time_derivative(np.zeros(50), 0.1, order=3)


@given(st.floats(-4.9, 4.9))
@settings(max_examples=30, deadline=None)
def test_interpolation_reproduces_polynomials(t):
    g = TimeGrid.symmetric(5.0, 0.25)
    x = g.values
    data = 1 + 2 * x - 0.3 * x**3 + 0.01 * x**7
    expect = 1 + 2 * t - 0.3 * t**3 + 0.01 * t**7
    assert interpolate(data, g, t) == pytest.approx(expect, rel=1e-10, abs=1e-10)


def test_interpolation_outside_grid():
    g = TimeGrid.symmetric(1.0, 0.1)
    with pytest.raises(ValueError):
        interpolate(np.zeros(g.n), g, 1.5)
