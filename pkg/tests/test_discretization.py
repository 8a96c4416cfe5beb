import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgdiag.discretization import (
    OperatorMatrix,
    WeightedProduct,
    adjoint_array,
    build_grid,
    hermitian_function,
    position_weight,
    smoothing_gauge,
    sobolev_weight,
    spectral_norms,
    weighted_adjoint,
)

TWO_PI = 2 * math.pi


def random_matrix(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def test_grid_points_and_fft_layout():
    g = build_grid(8, TWO_PI)
    np.testing.assert_allclose(g.points, np.arange(8) * math.pi / 4, atol=1e-15)
    np.testing.assert_array_equal(g.wavenumbers, [0, 1, 2, 3, -4, -3, -2, -1])


def test_grid_spacing_and_max_wavenumber():
    g = build_grid(16, 1.0)
    assert g.spacing == pytest.approx(1 / 16)
    assert np.max(np.abs(g.wavenumbers)) == pytest.approx(16 * math.pi)


@pytest.mark.parametrize("n", [6, 4, 12, 24])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        build_grid(n, TWO_PI)


def test_grid_rejects_nonpositive_length():
    with pytest.raises(ValueError):
        build_grid(8, 0.0)


def test_fft_round_trip(rng, grid16):
    F = grid16.fourier_matrix()
    for _ in range(5):
        v = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        back = np.linalg.solve(F, F @ v)
        assert np.linalg.norm(back - v) <= 1e-12 * np.linalg.norm(v)
    w = np.fft.ifft(np.fft.fft(v))
    assert np.linalg.norm(w - v) <= 1e-12 * np.linalg.norm(v)


def test_fourier_matrix_diagonalizes_derivative(grid16):
    D = grid16.derivative_matrix() if callable(grid16.derivative_matrix) else grid16.derivative_matrix
    x = grid16.points
    np.testing.assert_allclose(D @ np.sin(3 * x), 3 * np.cos(3 * x), atol=1e-11)


def fourier_eigenvalue(grid, op, k):
    F = grid.fourier_matrix()
    diag = np.diag(F @ op.entries @ np.linalg.inv(F))
    j = int(np.flatnonzero(grid.wavenumbers == k)[0])
    return diag[j]


def test_sobolev_weight_examples(grid16):
    np.testing.assert_allclose(sobolev_weight(grid16, 0).entries, np.eye(16), atol=1e-13)
    assert fourier_eigenvalue(grid16, sobolev_weight(grid16, 2), 1) == pytest.approx(2.0)
    assert fourier_eigenvalue(grid16, sobolev_weight(grid16, -1), 3) == pytest.approx(10 ** -0.5)


@given(st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_sobolev_weight_inverse_pair(m):
    g = build_grid(16, TWO_PI)
    prod = sobolev_weight(g, m).entries @ sobolev_weight(g, -m).entries
    np.testing.assert_allclose(prod, np.eye(16), atol=1e-12)


def test_weighted_adjoint_uniform_hermitian(rng):
    A = random_matrix(rng, 6)
    H = A + A.conj().T
    op = OperatorMatrix(H, WeightedProduct(np.full(6, 0.3)))
    np.testing.assert_allclose(weighted_adjoint(op).entries, H, atol=1e-14)


def test_weighted_adjoint_single_entry():
    # D^{-1} E21 D carries the ratio d1 / d2 (the defining relation below fixes the direction)
    d = np.array([2.0, 5.0])
    E12 = np.array([[0, 1], [0, 0]], dtype=complex)
    adj = weighted_adjoint(OperatorMatrix(E12, WeightedProduct(d))).entries
    np.testing.assert_allclose(adj, (d[0] / d[1]) * E12.T, atol=1e-15)


def test_weighted_adjoint_defining_relation(rng):
    # <u, A v>_d = <A^dagger u, v>_d
    d = rng.uniform(0.5, 2.0, 8)
    A = random_matrix(rng, 8)
    u, v = random_matrix(rng, 8)[:, :2].T
    p = WeightedProduct(d)
    lhs = p.inner(u, A @ v)
    rhs = p.inner(adjoint_array(A, d) @ u, v)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_weighted_adjoint_involution_and_product(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.2, 3.0, 16)
    A, B = random_matrix(rng, 16), random_matrix(rng, 16)
    p = WeightedProduct(d)
    adj = lambda M: weighted_adjoint(OperatorMatrix(M, p)).entries
    scale = np.linalg.norm(A) * np.linalg.norm(B)
    assert np.linalg.norm(adj(adj(A)) - A) <= 1e-12 * np.linalg.norm(A)
    assert np.linalg.norm(adj(A @ B) - adj(B) @ adj(A)) <= 1e-12 * scale


def test_gauge_identity_single_mode(grid16):
    # identity restricted to the k=1 mode: weight (1 + 1)^{1/2} on both sides
    F = grid16.fourier_matrix()
    j = int(np.flatnonzero(grid16.wavenumbers == 1)[0])
    P = np.linalg.inv(F)[:, [j]] @ F[[j], :]
    g = smoothing_gauge(P, [1], grid16)
    assert g.values[1] >= 2.0 - 1e-12


def test_gauge_zero_mode_projector(grid16):
    P = np.full((16, 16), 1 / 16, dtype=complex)
    g = smoothing_gauge(P, [0, 1, 2, 3], grid16)
    for m in (0, 1, 2, 3):
        assert g.values[m] == pytest.approx(1.0, abs=1e-12)


def test_gauge_smoothing_operator(grid16):
    A = sobolev_weight(grid16, -4)
    g = smoothing_gauge(A, [0, 1, 2], grid16)
    # dense oracle: sup_k (1 + k^2)^{m - 2}
    k2 = 1 + grid16.wavenumbers**2
    for m in (0, 1, 2):
        assert g.values[m] == pytest.approx(np.max(k2 ** (m - 2.0)), rel=1e-12)
    assert g.values[1] == pytest.approx(1.0)


def test_gauge_of_zero_is_zero(grid16):
    g = smoothing_gauge(np.zeros((16, 16)), [0, 1, 2, 3], grid16)
    assert all(v == 0.0 for v in g.values.values())


def test_gauge_requires_orders(grid16):
    with pytest.raises(ValueError):
        smoothing_gauge(np.eye(16), [], grid16)


def test_position_weight_examples():
    g = build_grid(16, 8.0)
    np.testing.assert_allclose(position_weight(g, 0).entries, np.eye(16))
    w1 = np.diag(position_weight(g, 1).entries).real
    centre = int(np.argmin(np.abs(g.signed_distance)))
    assert g.signed_distance[centre] == 0.0
    assert w1[centre] == pytest.approx(1.0)
    at_two = int(np.flatnonzero(np.isclose(g.signed_distance, 2.0))[0])
    assert np.diag(position_weight(g, 2).entries).real[at_two] == pytest.approx(5.0)


def test_hermitian_function_square_root(rng):
    d = rng.uniform(0.5, 2.0, 10)
    X = random_matrix(rng, 10)
    S = X @ adjoint_array(X, d) + np.eye(10)
    R = hermitian_function(S, d, np.sqrt)
    assert np.linalg.norm(R @ R - S) <= 1e-10 * np.linalg.norm(S)


def test_spectral_norms_matches_dense(rng):
    stack = np.stack([random_matrix(rng, 7) for _ in range(4)])
    expect = [np.linalg.norm(M, 2) for M in stack]
    np.testing.assert_allclose(spectral_norms(stack), expect, rtol=1e-10)
