import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_model
from kgdiag.diagonalization import build_pack, riccati_solve
from kgdiag.evolution import (
    Propagator,
    PropagatorCache,
    asymptotic_generator,
    cauchy_generator,
    evolve,
    evolve_path,
    group_defect,
    interaction_residual,
    max_step,
    propagator_table,
    static_cauchy_generator,
    symplectic_defect,
    symplectic_form,
    uniform_bound_scan,
    weight_propagation_scan,
)
from kgdiag.families import BlockOperatorFamily
from kgdiag.timegrid import TimeGrid


def constant_family(H, horizon=4.0, dt=0.1, frame="cauchy"):
    times = TimeGrid.symmetric(horizon, dt)
    n = H.shape[0] // 2
    data = np.repeat(H[None].astype(complex), times.n, axis=0)
    return BlockOperatorFamily(times, data, np.ones((times.n, n)), "full", frame, "const")


SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture(scope="module")
def sech_pack(sech_model):
    return build_pack(riccati_solve(sech_model, order=3), sech_model)


@pytest.fixture(scope="module")
def std_pack():
    model = small_model("std", n=16, horizon=20.0)
    return build_pack(riccati_solve(model, order=3), model)


def test_single_mode_exponential():
    gen = constant_family(SWAP)
    for t in (0.3, 1.0, math.pi / 2, -2.5):
        U = evolve(gen, t, 0.0).block
        np.testing.assert_allclose(U, math.cos(t) * np.eye(2) + 1j * math.sin(t) * SWAP, atol=1e-10)
    np.testing.assert_allclose(evolve(gen, math.pi / 2, 0.0).block, [[0, 1j], [1j, 0]], atol=1e-10)


def test_zero_generator_is_identity():
    gen = constant_family(np.zeros((4, 4)))
    for t, s in ((1.0, -2.0), (-3.0, 3.0), (0.5, 0.5)):
        assert np.array_equal(evolve(gen, t, s).block, np.eye(4))


def test_static_exact_paths_agree_with_integrator(static_model):
    gen = cauchy_generator(static_model)
    exact = static_cauchy_generator(static_model.a_out.entries, static_model.a_out.product.density)
    U = evolve(gen, 3.0, -1.0).block
    V = exact.propagator(3.0, -1.0).block
    assert np.linalg.norm(U - V, 2) <= 1e-9 * np.linalg.norm(V, 2)


def test_identity_has_no_symplectic_defect():
    U = Propagator(0.0, 0.0, np.eye(6, dtype=complex), frame="cauchy")
    assert symplectic_defect(U) == 0.0
    U = Propagator(0.0, 0.0, np.eye(6, dtype=complex), frame="ad")
    assert symplectic_defect(U) == 0.0


def test_static_exponential_is_symplectic():
    gen = constant_family(SWAP)
    assert symplectic_defect(evolve(gen, 3.7, -2.0)) <= 1e-10


def _rk4_lossy(H, t, h):
    # explicit RK4 with an oversized step: not symplectic, errors accumulate
    U = np.eye(H.shape[0], dtype=complex)
    A = 1j * H
    n = int(round(t / h))
    for _ in range(n):
        k1 = A @ U
        k2 = A @ (U + 0.5 * h * k1)
        k3 = A @ (U + 0.5 * h * k2)
        k4 = A @ (U + h * k3)
        U = U + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return U


def test_lossy_integrator_defect_grows():
    H = np.array([[0.0, 1.0], [4.0, 0.0]])
    defects = [symplectic_defect(Propagator(t, 0.0, _rk4_lossy(H, t, 0.5), frame="cauchy")) for t in (2.0, 4.0, 8.0)]
    assert defects[0] > 1e-3
    assert defects[0] < defects[1] < defects[2]


def test_oversized_step_is_refused_then_inaccurate():
    H = np.array([[0.0, 1.0], [4.0, 0.0]])
    gen = constant_family(H)
    with pytest.raises(ValueError, match="violates"):
        evolve(gen, 2.0, 0.0, step=0.5)
    errs = []
    exact = static_cauchy_generator(np.array([[4.0]]), np.ones(1))
    for t in (1.0, 2.0, 4.0):
        U = evolve(gen, t, 0.0, step=0.5, validate=False)
        errs.append(np.linalg.norm(U.block - exact.propagator(t, 0.0).block, 2))
        # commutator-free Magnus keeps the form exactly even when inaccurate
        assert symplectic_defect(U) <= 1e-10
    assert errs[0] < errs[1] < errs[2]


@given(st.floats(-9.5, 9.5), st.floats(-9.5, 9.5), st.floats(-9.5, 9.5))
@settings(max_examples=6, deadline=None)
def test_group_property_sech(t, tp, s):
    model = _SECH[0]
    assert group_defect(cauchy_generator(model), t, tp, s) <= 1e-8


_SECH = [small_model("sech", n=8, horizon=10.0)]


def test_group_property_static(static_model):
    gen = cauchy_generator(static_model)
    assert group_defect(gen, 4.0, -1.3, 2.2) <= 1e-8


def test_symplectic_over_long_interval(sech_model):
    gen = cauchy_generator(sech_model)
    U = evolve(gen, 10.0, -10.0)
    assert symplectic_defect(U, grid=sech_model.grid) <= 1e-8


def test_cross_validation_with_ad_frame(sech_model, sech_pack):
    U = evolve(cauchy_generator(sech_model), 5.0, -5.0).block
    U_ad = evolve(sech_pack.H_ad, 5.0, -5.0).block
    rebuilt = sech_pack.T_at(5.0) @ U_ad @ sech_pack.T_inv_at(-5.0)
    assert np.linalg.norm(U - rebuilt, 2) / np.linalg.norm(U, 2) <= 1e-7


def test_path_matches_individual_evolutions(sech_pack):
    path = evolve_path(sech_pack.H_ad, 0.0, [1.0, 2.5, 4.0])
    for U in path:
        V = evolve(sech_pack.H_ad, U.t, 0.0)
        assert np.linalg.norm(U.block - V.block) <= 1e-12 * np.linalg.norm(V.block)
    with pytest.raises(ValueError):
        evolve_path(sech_pack.H_ad, 0.0, [1.0, -1.0])


def test_table_covers_both_sides(sech_pack):
    tab = propagator_table(sech_pack.H_d, [-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(tab[1], np.eye(tab.shape[1]))
    assert np.linalg.norm(tab[0] - evolve(sech_pack.H_d, -2.0, 0.0).block) <= 1e-12 * np.linalg.norm(tab[0])


def test_outside_grid_rejected(sech_pack):
    with pytest.raises(ValueError, match="outside"):
        evolve(sech_pack.H_ad, 11.0, 0.0)


def test_cache_reuses_entries(sech_pack):
    cache = PropagatorCache()
    a = cache.propagate(sech_pack.H_ad, 1.0, 0.0)
    b = cache.propagate(sech_pack.H_ad, 1.0, 0.0)
    assert a is b and len(cache) == 1


def test_max_step_follows_spectral_radius():
    gen = constant_family(np.array([[0.0, 1.0], [9.0, 0.0]]))
    assert max_step(gen) == pytest.approx(0.2 / 3.0)


def test_symplectic_forms():
    q = symplectic_form(2, "cauchy")
    np.testing.assert_array_equal(q, [[0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]])
    np.testing.assert_array_equal(symplectic_form(2, "ad"), np.diag([1, 1, -1, -1]))


# bounds and weights


def test_static_diagonal_bound_is_one(static_model):
    gen = asymptotic_generator(static_model, "out")
    scan = uniform_bound_scan(gen, 20.0, (-1, 0, 1, 2), static_model.grid)
    for m, v in scan.sup.items():
        assert v <= 1 + 1e-8
    assert not scan.flagged


def test_sech_bound_stable(sech_pack):
    grid = sech_pack.model.grid
    short = uniform_bound_scan(sech_pack.H_ad, 5.0, (-1, 0, 1), grid, start=0.0)
    long = uniform_bound_scan(sech_pack.H_ad, 10.0, (-1, 0, 1), grid, start=0.0)
    for m in (-1, 0, 1):
        assert long.sup[m] <= 3.0
        assert long.sup[m] <= 1.05 * short.sup[m] + 1e-3
    assert not long.flagged


def test_growth_is_flagged(sech_pack):
    # a constant anti-Hermitian part makes i*gen carry a growing Hermitian piece
    H = sech_pack.H_ad
    grow = BlockOperatorFamily(H.times, H.data - 0.2j * np.eye(H.data.shape[1]), H.density, "full", "ad", "grow")
    scan = uniform_bound_scan(grow, 10.0, (0,), sech_pack.model.grid)
    assert scan.flagged
    assert scan.sup[0] == pytest.approx(math.exp(2.0), rel=0.05)


def test_weight_scan_k0_is_bound_scan(sech_pack):
    grid = sech_pack.model.grid
    w = weight_propagation_scan(sech_pack.H_ad, 1.0, 0.0, 8.0, grid, n_samples=9)
    # k = 0 removes the weights; U(0,t) bounds match U(t,0) bounds for q-unitary U
    path = evolve_path(sech_pack.H_ad, 0.0, np.linspace(0, 8, 9))
    from kgdiag.evolution import _sobolev_norm

    direct = [_sobolev_norm(U.inverse().block, grid, 1.0, -1.0, U.density_s, U.density_t) for U in path]
    np.testing.assert_allclose(w.values[1.0], direct, rtol=1e-10)


def test_weight_scan_static_k1(static_model):
    gen = asymptotic_generator(static_model, "out")
    scan = weight_propagation_scan(gen, 0.0, 1.0, 20.0, static_model.grid)
    assert not scan.flagged
    assert scan.sup[0.0] <= 5.0


def test_weight_scan_std(std_pack):
    scan = weight_propagation_scan(std_pack.H_ad, 1.0, 1.0, 20.0, std_pack.model.grid)
    assert scan.sup[1.0] <= 5.0
    assert not scan.flagged


# interaction picture


def test_interaction_residual_static(static_model):
    pack = build_pack(riccati_solve(static_model), static_model)
    gauge, tail = interaction_residual(pack, 4.0, -3.0, static_model.grid)
    # higher orders amplify the integrator's round-off at the top frequency
    for m in (0, 1, 2):
        assert gauge.values[m] <= 1e-8


def test_interaction_residual_same_time(sech_pack):
    gauge, _ = interaction_residual(sech_pack, 1.5, 1.5, sech_pack.model.grid)
    assert gauge.values[0] <= 1e-12
    for m in gauge.orders:
        assert gauge.values[m] <= 1e-13 * gauge.weight_max ** (2 * m)


def test_interaction_residual_sech_band_limited(sech_pack):
    grid = sech_pack.model.grid
    tails = [interaction_residual(sech_pack, 2.5, -2.5, grid, k_band=k)[1] for k in (1.0, 2.0, 4.0, 6.0)]
    assert all(a > 5 * b for a, b in zip(tails, tails[1:]))
    assert tails[2] < 1e-3
