from types import SimpleNamespace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import small_model
from kgdiag.diagonalization import build_pack, riccati_solve
from kgdiag.evolution import cauchy_generator, propagator_table, static_cauchy_generator, static_diagonal_generator
from kgdiag.propagators import (
    ConventionError,
    KernelOperator,
    apply_block_operator,
    apply_wave_operator,
    band_limited_impulse,
    block_kernels,
    cumulative_simpson_uniform,
    feynman_block,
    feynman_frequency_proxy,
    feynman_positivity,
    feynman_residual,
    feynman_scalar,
    feynman_vs_state,
    jump_defect,
    retarded_advanced,
    scalar_kernels,
)
from kgdiag.states import reference_covariances, two_point_kernel
from kgdiag.timegrid import TimeGrid

W = 1.5
T = np.arange(-4.0, 4.0 + 1e-9, 0.05)


def _source(t):
    # below 1e-13 at the ends of [-4, 4]
    return np.exp(-2.0 * np.asarray(t) ** 2)


@pytest.fixture(scope="module")
def single():
    return static_cauchy_generator(np.array([[W * W]]), np.ones(1))


def _oscillator_oracle(f, t_eval, backwards=False):
    # u'' + w^2 u = f with zero data before (or after) the support
    rhs = lambda t, y: [y[1], f(t) - W * W * y[0]]
    span = (t_eval[-1], t_eval[0]) if backwards else (t_eval[0], t_eval[-1])
    sol = solve_ivp(rhs, span, [0.0, 0.0], t_eval=t_eval[::-1] if backwards else t_eval,
                    method="DOP853", rtol=1e-12, atol=1e-14, max_step=0.01)
    return sol.y[0][::-1] if backwards else sol.y[0]


def test_scalar_kernels_single_mode(single):
    s = np.array([-1.0, 0.5])
    k = scalar_kernels(single, T, s)
    d = T[:, None] - s[None, :]
    causal = np.sin(W * d) / W
    np.testing.assert_allclose(k["causal"].blocks[..., 0, 0], causal, atol=1e-12)
    np.testing.assert_allclose(k["retarded"].blocks[..., 0, 0], np.where(d > 0, causal, 0), atol=1e-12)
    np.testing.assert_allclose(k["advanced"].blocks[..., 0, 0], np.where(d < 0, -causal, 0), atol=1e-12)
    diff = k["retarded"] - k["advanced"]
    np.testing.assert_allclose(diff.blocks, k["causal"].blocks, atol=1e-14)


def test_kernel_operator_validates_labels():
    with pytest.raises(ValueError, match="kind"):
        KernelOperator("weird", "scalar", T, T, np.zeros((1, 1, 1, 1)))
    with pytest.raises(ValueError, match="level"):
        KernelOperator("retarded", "mixed", T, T, np.zeros((1, 1, 1, 1)))


@pytest.mark.parametrize("kind", ["retarded", "advanced"])
def test_quadrature_matches_ode_oracle(single, kind):
    f = _source(T)[:, None]
    u = retarded_advanced(kind, "scalar", single, f, T)
    oracle = _oscillator_oracle(_source, T, backwards=(kind == "advanced"))
    assert np.max(np.abs(u[:, 0] - oracle)) <= 1e-7
    # P G f = f in the interior
    Pu = apply_wave_operator(_static_model_1(), u, T)
    assert np.max(np.abs(Pu[8:-8, 0] - f[8:-8, 0])) <= 1e-6


def _static_model_1():
    # one-mode model with r = 0 and a = w^2
    times = TimeGrid.symmetric(5.0, 0.05)
    return SimpleNamespace(times=times, a=SimpleNamespace(data=np.full((times.n, 1, 1), W * W)),
                           r_diag=np.zeros((times.n, 1)))


def test_block_quadrature_inverts_block_operator():
    gen = static_diagonal_generator(np.array([[W]]), np.ones(1))
    f = np.stack([_source(T), 0.5 * _source(T - 0.3)], axis=1)
    v = retarded_advanced("retarded", "block", gen, f, T)
    res = apply_block_operator(gen, v, T)
    assert np.max(np.abs(res[8:-8] - f[8:-8])) <= 1e-6


def test_support_overflow_rejected(single):
    f = np.ones((T.size, 1))
    with pytest.raises(ValueError, match="overflows"):
        retarded_advanced("retarded", "scalar", single, f, T)
    with pytest.raises(ValueError, match="kind"):
        retarded_advanced("causal", "scalar", single, _source(T)[:, None], T)
    with pytest.raises(ValueError, match="sampled"):
        retarded_advanced("retarded", "scalar", single, _source(T)[:-1, None], T)


def test_scalar_jump_is_identity(single):
    k = scalar_kernels(single, T, T[40:120:20])
    assert jump_defect(k["retarded"], np.eye(1)) <= 1e-6
    assert jump_defect(k["advanced"], np.eye(1)) <= 1e-6
    assert jump_defect(k["causal"], np.zeros((1, 1))) <= 1e-6


def test_block_jump_is_i():
    gen = static_diagonal_generator(np.array([[W]]), np.ones(1))
    k = block_kernels(gen, T, T[40:120:20])
    assert jump_defect(k["retarded"], 1j * np.eye(2), derivative=0) <= 1e-8
    with pytest.raises(ValueError, match="diagonal"):
        jump_defect(block_kernels(gen, T, [10.0])["retarded"], np.eye(2))


def test_cumulative_simpson_exact_for_cubics():
    t = np.linspace(0, 2, 21)
    y = 1 + t - 3 * t**2 + t**3
    exact = t + t**2 / 2 - t**3 + t**4 / 4
    np.testing.assert_allclose(cumulative_simpson_uniform(y, t[1] - t[0]), exact, atol=1e-12)
    with pytest.raises(ValueError, match="at least"):
        cumulative_simpson_uniform(y[:5], 0.1)


def test_cumulative_simpson_accuracy():
    t = np.arange(0, 10, 0.05)
    err = np.abs(cumulative_simpson_uniform(np.cos(t), 0.05) - np.sin(t)).max()
    assert err <= 1e-8


def test_impulse_has_unit_mass():
    t = np.arange(-3, 3, 0.01)
    for width in (None, 0.2):
        w = band_limited_impulse(t, 0.5, np.ones(2), width)
        assert w.shape == (t.size, 2)
        assert np.sum(w[:, 0]) * 0.01 == pytest.approx(1.0, rel=1e-9)


# Feynman parametrix


@pytest.fixture(scope="module")
def feynman_cases():
    out = {}
    for name in ("static", "sech"):
        model = small_model(name, n=8, horizon=10.0)
        pack = build_pack(riccati_solve(model, order=3), model)
        s = T[::20]
        Ud = propagator_table(pack.H_d, T)
        block = feynman_block(pack, T, s, Ud_t=Ud, Ud_s=Ud[::20], boundary_times=(-10.0, 10.0))
        gen = cauchy_generator(model)
        U = propagator_table(gen, T)
        sk = scalar_kernels(gen, T, s, U, U[::20])
        lam = two_point_kernel(reference_covariances(pack, 0.0), gen, T, s, "+", U, U[::20])
        out[name] = dict(model=model, pack=pack, block=block, scalar=feynman_scalar(pack, block), kernels=sk,
                         lam=KernelOperator("reference", "scalar", T, s, lam.blocks))
    return out


def test_feynman_block_exact_structure(feynman_cases):
    for case in feynman_cases.values():
        meta = case["block"].meta
        assert meta["jump_defect"] <= 1e-12
        assert meta["boundary_out_defect"] <= 1e-12
        assert meta["boundary_in_defect"] <= 1e-12


def test_feynman_static_closed_form(feynman_cases):
    case = feynman_cases["static"]
    grid = case["model"].grid
    F = grid.fourier_matrix()
    w = np.sqrt(1 + grid.wavenumbers**2)
    got = np.diagonal(F @ case["scalar"].blocks @ F.conj().T, axis1=2, axis2=3)
    d = np.abs(T[:, None] - T[::20][None, :])
    exact = -1j / (2 * w) * np.exp(1j * w * d[..., None])
    assert np.max(np.abs(got - exact)) <= 1e-10


def test_feynman_jump_and_residual(feynman_cases):
    static, sech = feynman_cases["static"], feynman_cases["sech"]
    for case in (static, sech):
        assert jump_defect(case["scalar"], np.eye(8)) <= 1e-6
    r = feynman_residual(static["scalar"], static["model"], static["model"].grid)
    assert r["relative_residual"] <= 1e-9 and r["fourier_tail"] <= 1e-9
    r = feynman_residual(sech["scalar"], sech["model"], sech["model"].grid)
    # a parametrix: residual is small and smoother than the kernel, not zero
    assert 1e-6 < r["relative_residual"] < 1e-2
    assert r["fourier_tail"] < r["relative_residual"]


def test_feynman_matches_state_convention(feynman_cases):
    for name, bound in (("static", 1e-10), ("sech", 5e-2)):
        case = feynman_cases[name]
        k = case["kernels"]
        v = feynman_vs_state(case["scalar"], case["lam"], k["retarded"], k["advanced"], case["model"],
                             case["model"].grid)
        assert v["chosen"] == "i^-1 Lambda+ + G-"
        assert max(v["gauge"].values.values()) <= bound
        for label, c in v["candidates"].items():
            assert (c["p_residual"] < 1e-6) == ("+ G" in label)


def test_convention_error_when_nothing_inverts(feynman_cases):
    case = feynman_cases["static"]
    zero = KernelOperator("reference", "scalar", T, T[::20], np.zeros_like(case["lam"].blocks))
    with pytest.raises(ConventionError):
        feynman_vs_state(case["scalar"], zero, zero, zero, case["model"], case["model"].grid)


def test_feynman_positivity_static():
    model = small_model("static", n=8, horizon=10.0)
    pack = build_pack(riccati_solve(model), model)
    t = np.arange(-2.0, 2.0 + 1e-9, 0.1)
    gf = feynman_scalar(pack, feynman_block(pack, t, t))
    assert gf.meta["hermitian_identity_defect"] <= 1e-10
    pos = feynman_positivity(gf)
    assert pos["min_eig"] >= -1e-10 * pos["max_eig"]
    # the opposite sign is clearly indefinite
    flipped = KernelOperator("feynman", "scalar", t, t, np.conj(gf.blocks))
    assert feynman_positivity(flipped)["relative_min"] < -0.1
    with pytest.raises(ValueError, match="square"):
        feynman_positivity(KernelOperator("feynman", "scalar", t, t[:3], gf.blocks[:, :3]))


def test_feynman_frequency_sides():
    model = small_model("static", n=8, horizon=40.0)
    pack = build_pack(riccati_solve(model), model)
    t = np.arange(-30.0, 30.0 + 1e-9, 0.05)
    gf = feynman_scalar(pack, feynman_block(pack, t, [0.0]))
    w = np.sqrt(1 + model.grid.wavenumbers**2)
    for side in ("future", "past"):
        h = feynman_frequency_proxy(gf, model.grid, side, 0, frequencies=w, min_oscillations=4)
        assert h["min_resolved_fraction"] >= 0.99
    with pytest.raises(ValueError, match="side"):
        feynman_frequency_proxy(gf, model.grid, "sideways", 0, frequencies=w, min_oscillations=4)
