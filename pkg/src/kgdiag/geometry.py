"""Metric scenarios on a 1+1 dimensional window and assembly of the model operator.

A scenario describes ``g = -c^2 dt^2 + h (dx - b dt)^2`` and a potential ``V``
through vectorised callables of ``(t, x)``. Scenarios in model form (``c = 1``,
``b = 0``) are assembled into the spatial operator

    a(t) = -h^{-1/2} d/dx h^{-1/2} d/dx + V,    r(t) = d/dt log h^{1/2},

of the equation ``(d_t^2 + r d_t + a) phi = 0``. Other scenarios go through
:func:`flow_straighten` and :func:`conformal_reduce` first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .discretization import SpatialGrid, WeightedProduct, OperatorMatrix, adjoint_array
from .families import OperatorFamily
from .timegrid import TimeGrid, apply_time_derivative

Field = Callable[[float, np.ndarray], np.ndarray]
Profile = Callable[[np.ndarray], np.ndarray]

__all__ = [
    "MetricScenario",
    "ModelOperatorData",
    "PRESETS",
    "make_scenario",
    "assemble_model",
    "assemble_spatial_operator",
    "conformal_reduce",
    "ConformalRecord",
    "flow_straighten",
    "FlowRecord",
    "nontrapping_check",
    "positivity_check",
    "scalar_curvature_fd",
]


def _one(t, x):
    return np.ones_like(np.asarray(x, dtype=float))


def _zero(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _sech(x):
    ax = np.abs(np.asarray(x, dtype=float))
    e = np.exp(-ax)
    return 2 * e / (1 + e * e)


def _bracket(x):
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


@dataclass(frozen=True, eq=False)
class MetricScenario:
    """Declarative description of the metric data, potential and asymptotics."""

    name: str
    h: Field = _one
    c: Field = _one
    b: Field | None = None
    V: Field = _one
    h_out: Profile | None = None
    h_in: Profile | None = None
    c_out: Profile | None = None
    c_in: Profile | None = None
    V_out: Profile | None = None
    V_in: Profile | None = None
    delta: float = 2.0
    mu_prime: float = 2.0
    mass_floor: float = 1.0
    dimension: int = 2
    hypothesis: str = "td"
    dh_dt: Field | None = None
    db_dx: Field | None = None
    params: dict = field(default_factory=dict)

    def profile(self, which: str, direction: str) -> Profile:
        prof = getattr(self, f"{which}_{direction}")
        if prof is not None:
            return prof
        base = getattr(self, which)
        sign = 1.0 if direction == "out" else -1.0
        return lambda x: base(sign * 1e8, x)

    @property
    def is_model_form(self) -> bool:
        return self.c is _one and self.b is None


# ---------------------------------------------------------------------------
# presets


def _periodic_distance(x, length):
    """Smooth periodic stand-in for the distance from the window centre."""
    return (length / math.pi) * np.sin(math.pi * (np.asarray(x) - length / 2) / length)


def _preset_static(p):
    m2 = p["mass"] ** 2
    V = lambda t, x: np.full_like(np.asarray(x, dtype=float), m2)
    return MetricScenario("static", V=V, mass_floor=p.get("mass_floor", m2), hypothesis="static",
                          delta=p["delta"], params=p)


def _preset_sech(p):
    m2, A, tau, L = p["mass"] ** 2, p["amplitude"], p["tau"], p["length"]
    V = lambda t, x: m2 + A * _sech(t / tau) * np.cos(2 * np.pi * np.asarray(x) / L)
    return MetricScenario("sech", V=V, mass_floor=p.get("mass_floor", m2), hypothesis="td",
                          delta=p["delta"], params=p)


def _preset_td(p):
    m2, A, tau, L, d = p["mass"] ** 2, p["amplitude"], p["tau"], p["length"], p["delta"]
    V = lambda t, x: m2 + A * _bracket(t / tau) ** (-d) * np.cos(2 * np.pi * np.asarray(x) / L)
    return MetricScenario("td", V=V, mass_floor=p.get("mass_floor", m2), hypothesis="td", delta=d, params=p)


def _preset_std(p):
    m2, A, tau, L, d, ell = p["mass"] ** 2, p["amplitude"], p["tau"], p["length"], p["delta"], p["ell"]

    def V(t, x):
        rho = _periodic_distance(x, L) / ell
        return m2 + A * (1.0 + (t / tau) ** 2 + rho**2) ** (-d / 2)

    return MetricScenario("std", V=V, mass_floor=p.get("mass_floor", m2), hypothesis="std", delta=d, params=p)


def _preset_flrw(p):
    m2, sig, tau = p["mass"] ** 2, p["amplitude"], p["tau"]
    h = lambda t, x: np.full_like(np.asarray(x, dtype=float), math.exp(2 * sig * math.tanh(t / tau)))
    dh = lambda t, x: h(t, x) * 2 * sig / tau * _sech(t / tau) ** 2
    V = lambda t, x: np.full_like(np.asarray(x, dtype=float), m2)
    return MetricScenario("flrw", h=h, V=V, dh_dt=dh, mass_floor=p.get("mass_floor", m2), hypothesis="td",
                          delta=p["delta"], params=p)


def _preset_metric_td(p):
    m2, A, tau, L, d = p["mass"] ** 2, p["amplitude"], p["tau"], p["length"], p["delta"]
    if abs(A) >= 1:
        raise ValueError("metric_td amplitude must satisfy |amplitude| < 1")
    env = lambda t: _bracket(t / tau) ** (-d)
    denv = lambda t: -d * (t / tau**2) * _bracket(t / tau) ** (-d - 2)
    h = lambda t, x: 1.0 + A * env(t) * np.cos(2 * np.pi * np.asarray(x) / L)
    dh = lambda t, x: A * denv(t) * np.cos(2 * np.pi * np.asarray(x) / L)
    V = lambda t, x: np.full_like(np.asarray(x, dtype=float), m2)
    return MetricScenario("metric_td", h=h, V=V, dh_dt=dh, mass_floor=p.get("mass_floor", m2), hypothesis="td",
                          delta=d, params=p)


def _preset_lapse(p):
    m2, A, tau, L, d = p["mass"] ** 2, p["amplitude"], p["tau"], p["length"], p["delta"]
    c = lambda t, x: 1.0 + A * _bracket(t / tau) ** (-d) * np.cos(2 * np.pi * np.asarray(x) / L)
    V = lambda t, x: np.full_like(np.asarray(x, dtype=float), m2)
    return MetricScenario("lapse", c=c, V=V, mass_floor=p.get("mass_floor", m2), hypothesis="td", delta=d,
                          params=p)


def _preset_shift(p):
    m2, beta, tau, L = p["mass"] ** 2, p["amplitude"], p["tau"], p["length"]
    kappa = p.get("kappa", 0.0)
    k = 2 * np.pi / L
    b = lambda t, x: beta * _sech(t / tau) ** 2 * (1.0 + kappa * np.cos(k * np.asarray(x)))
    db = lambda t, x: -beta * _sech(t / tau) ** 2 * kappa * k * np.sin(k * np.asarray(x))
    V = lambda t, x: np.full_like(np.asarray(x, dtype=float), m2)
    return MetricScenario("shift", b=b, db_dx=db, V=V, mass_floor=p.get("mass_floor", m2), hypothesis="td",
                          delta=p["delta"], mu_prime=p.get("mu_prime", 2.0), params=p)


PRESET_DEFAULTS = {
    "mass": 1.0,
    "amplitude": 0.5,
    "tau": 2.0,
    "delta": 2.0,
    "ell": 1.0,
    "length": 2 * math.pi,
}

PRESETS: dict[str, tuple[Callable, str]] = {
    "static": (_preset_static, "h=1, V=m^2 (exactly static)"),
    "sech": (_preset_sech, "h=1, V=m^2 + A sech(t/tau) cos(2 pi x/L)"),
    "td": (_preset_td, "h=1, V=m^2 + A <t/tau>^-delta cos(2 pi x/L) (time decay only)"),
    "std": (_preset_std, "h=1, V=m^2 + A <(t/tau, x/ell)>^-delta (joint space-time decay)"),
    "flrw": (_preset_flrw, "h=exp(2 A tanh(t/tau)), V=m^2 (spatially homogeneous expansion)"),
    "metric_td": (_preset_metric_td, "h=1 + A <t/tau>^-delta cos(2 pi x/L), V=m^2"),
    "lapse": (_preset_lapse, "c=1 + A <t/tau>^-delta cos(2 pi x/L), needs conformal reduction"),
    "shift": (_preset_shift, "b=A sech^2(t/tau)(1 + kappa cos), needs flow straightening"),
}


def make_scenario(name: str, **params) -> MetricScenario:
    if name not in PRESETS:
        raise KeyError(f"unknown scenario {name!r}; available presets: {', '.join(sorted(PRESETS))}")
    p = dict(PRESET_DEFAULTS)
    p.update(params)
    return PRESETS[name][0](p)


# ---------------------------------------------------------------------------
# model operator


@dataclass(eq=False)
class ModelOperatorData:
    """Sampled ``a(t)``, ``r(t)`` (diagonal) and the asymptotic operators."""

    grid: SpatialGrid
    a: OperatorFamily
    r_diag: np.ndarray = field(repr=False)
    a_out: OperatorMatrix = field(repr=False)
    a_in: OperatorMatrix = field(repr=False)
    scenario: MetricScenario = field(repr=False)
    symmetrization_defect: float = 0.0

    @property
    def times(self) -> TimeGrid:
        return self.a.times

    @property
    def density_family(self) -> np.ndarray:
        return self.a.density

    def density(self, t: float) -> WeightedProduct:
        return WeightedProduct(self.a.density[self.times.index_of(t)])

    @property
    def r(self) -> OperatorFamily:
        data = np.zeros(self.a.data.shape, dtype=complex)
        idx = np.arange(self.a.n)
        data[:, idx, idx] = self.r_diag
        return self.a.with_data(data, order=0)

    def is_static(self) -> bool:
        return bool(np.all(self.a.data == self.a.data[:1]) and not np.any(self.r_diag))


def assemble_spatial_operator(grid: SpatialGrid, h: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetrized ``-h^{-1/2} D h^{-1/2} D + V`` and its relative symmetrization defect."""
    Dx = grid.derivative_matrix()
    w = 1.0 / np.sqrt(h)
    A = (w[:, None] * Dx.conj().T) @ (w[:, None] * Dx) + np.diag(V)
    density = np.sqrt(h) * grid.spacing
    Ad = adjoint_array(A, density)
    defect = float(np.linalg.norm(A - Ad) / np.linalg.norm(A))
    return 0.5 * (A + Ad), defect


def assemble_model(scenario: MetricScenario, grid: SpatialGrid, times: TimeGrid, fd_order: int = 8) -> ModelOperatorData:
    """Assemble ``a(t)`` and ``r(t)`` on the grid for a model-form scenario."""
    if not scenario.is_model_form:
        raise ValueError("assemble_model needs c = 1 and b = 0; apply flow_straighten/conformal_reduce first")
    x = grid.points
    ts = times.values
    nt, n = ts.size, grid.n_points
    a = np.empty((nt, n, n), dtype=complex)
    hs = np.empty((nt, n))
    defect = 0.0
    for j, t in enumerate(ts):
        h = np.asarray(scenario.h(t, x), dtype=float) * np.ones(n)
        V = np.asarray(scenario.V(t, x), dtype=float) * np.ones(n)
        if np.any(h <= 0):
            raise ValueError(f"h must be positive; violated at t={t}")
        hs[j] = h
        a[j], dj = assemble_spatial_operator(grid, h, V)
        defect = max(defect, dj)
    if scenario.dh_dt is not None:
        dh = np.array([np.asarray(scenario.dh_dt(t, x), dtype=float) * np.ones(n) for t in ts])
    elif np.all(hs == hs[:1]):
        dh = np.zeros_like(hs)
    else:
        dh = apply_time_derivative(hs, times.dt, fd_order)
    r = 0.5 * dh / hs
    density = np.sqrt(hs) * grid.spacing

    ops = {}
    for direction in ("out", "in"):
        h_prof = np.asarray(scenario.profile("h", direction)(x), dtype=float) * np.ones(n)
        V_prof = np.asarray(scenario.profile("V", direction)(x), dtype=float) * np.ones(n)
        A, _ = assemble_spatial_operator(grid, h_prof, V_prof)
        prod = WeightedProduct(np.sqrt(h_prof) * grid.spacing)
        s = np.sqrt(prod.density)
        lam_min = float(np.linalg.eigvalsh(0.5 * (s[:, None] * A / s[None, :] + (s[:, None] * A / s[None, :]).conj().T))[0])
        if lam_min < scenario.mass_floor * (1 - 1e-9):
            raise ValueError(
                f"a_{direction} has smallest eigenvalue {lam_min:.6g} below mass_floor {scenario.mass_floor:.6g}"
            )
        ops[direction] = OperatorMatrix(A, prod)
    fam = OperatorFamily(times, a, density, order=2.0, decay=scenario.delta)
    return ModelOperatorData(grid, fam, r, ops["out"], ops["in"], scenario, defect)


# ---------------------------------------------------------------------------
# reductions


@dataclass(eq=False)
class ConformalRecord:
    """Multipliers of the conformal reduction and the Cauchy-data block ``R(t)``."""

    c: Field
    dimension: int
    grid_points: np.ndarray = field(repr=False)
    dt_log_c: Field | None = None

    def multiplier(self, t: float, power: float) -> np.ndarray:
        return np.asarray(self.c(t, self.grid_points), dtype=float) ** power

    def R_block(self, t: float, eps: float = 1e-5) -> np.ndarray:
        n = self.dimension
        x = self.grid_points
        k = n / 2 - 1
        cf = np.asarray(self.c(t, x), dtype=float) * np.ones(x.size)
        if self.dt_log_c is not None:
            dlc = self.dt_log_c(t, x)
        else:
            dlc = (np.log(self.c(t + eps, x)) - np.log(self.c(t - eps, x))) / (2 * eps)
        N = x.size
        out = np.zeros((2 * N, 2 * N), dtype=complex)
        idx = np.arange(N)
        out[idx, idx] = cf**k
        out[N + idx, N + idx] = cf**k
        out[N + idx, idx] = -1j * k * dlc * cf**k
        return out


def _second_derivative_periodic(f: np.ndarray, spacing: float) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(f.size, d=spacing)
    return np.real(np.fft.ifft(-(k**2) * np.fft.fft(f)))


def _first_derivative_periodic(f: np.ndarray, spacing: float) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(f.size, d=spacing)
    kk = k.copy()
    if f.size % 2 == 0:
        kk[f.size // 2] = 0.0
    return np.real(np.fft.ifft(1j * kk * np.fft.fft(f)))


def _static_curvature_terms(h: np.ndarray, c: np.ndarray, spacing: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Scalar curvatures for the static profile ``-c^2 dt^2 + h dx^2 + (flat extra dims)``.

    Returns ``(R_{c^{-2} h}, R_g)`` where the spatial metric is
    ``c^{-2}(h dx^2 + dy_2^2 + ... + dy_{n-1}^2)``. Derivatives are taken with
    respect to the arclength of ``h dx^2`` (spectrally, on the periodic grid).
    """
    d = n - 1
    sq = np.sqrt(h)

    def dl(f):
        return _first_derivative_periodic(f, spacing) / sq

    phi = -np.log(c)
    lap_phi = dl(dl(phi))
    grad2 = dl(phi) ** 2
    R_spatial = -np.exp(-2 * phi) * (2 * (d - 1) * lap_phi + (d - 2) * (d - 1) * grad2)
    R_g = -2 * dl(dl(c)) / c
    return R_spatial, R_g


def conformal_reduce(scenario: MetricScenario, grid: SpatialGrid | None = None) -> tuple[MetricScenario, ConformalRecord]:
    """Reduce ``c != 1`` to model form: ``h~ = c^{-2} h``, ``V~ = k_n (R_{g~} - c^2 R_g) + c^2 V``.

    In dimension 2 the curvature coefficient ``(n-2)/(4(n-1))`` vanishes and
    ``V~ = c^2 V`` exactly. Higher dimensions are supported for static lapse
    and metric profiles only.
    """
    if scenario.b is not None:
        raise ValueError("conformal_reduce needs b = 0; apply flow_straighten first")
    n = scenario.dimension
    L = scenario.params.get("length", 2 * math.pi)
    pts = grid.points if grid is not None else np.linspace(0, L, 64, endpoint=False)
    record = ConformalRecord(scenario.c, n, pts)
    c, h, V = scenario.c, scenario.h, scenario.V
    if n == 2:
        h_new = lambda t, x: h(t, x) / c(t, x) ** 2
        V_new = lambda t, x: c(t, x) ** 2 * V(t, x)
        dh_new = None
    else:
        if grid is None:
            raise ValueError("a SpatialGrid is needed for curvature terms when dimension > 2")
        coef = (n - 2) / (4 * (n - 1))
        h_new = lambda t, x: h(t, x) / c(t, x) ** 2

        def V_new(t, x):
            x = np.asarray(x)
            hh = np.asarray(h(t, x), dtype=float) * np.ones(x.size)
            cc = np.asarray(c(t, x), dtype=float) * np.ones(x.size)
            Rs, Rg = _static_curvature_terms(hh, cc, grid.spacing, n)
            return coef * (Rs - cc**2 * Rg) + cc**2 * V(t, x)

        dh_new = None
    prof = {}
    for d in ("out", "in"):
        cp, hp, Vp = scenario.profile("c", d), scenario.profile("h", d), scenario.profile("V", d)
        prof[f"h_{d}"] = (lambda cp, hp: (lambda x: hp(x) / cp(x) ** 2))(cp, hp)
        if n == 2:
            prof[f"V_{d}"] = (lambda cp, Vp: (lambda x: cp(x) ** 2 * Vp(x)))(cp, Vp)
        else:
            prof[f"V_{d}"] = (lambda d: (lambda x: V_new(1e8 if d == "out" else -1e8, x)))(d)
        prof[f"c_{d}"] = lambda x: np.ones_like(np.asarray(x, dtype=float))
    reduced = replace(scenario, name=scenario.name + "+conformal", h=h_new, V=V_new, c=_one, dh_dt=dh_new, **prof)
    report = positivity_check(reduced, grid)
    if not report["pass"]:
        raise ValueError(
            f"reduced asymptotic potential {report['min_value']:.6g} is below mass_floor {scenario.mass_floor:.6g}"
        )
    return reduced, record


@dataclass(eq=False)
class FlowRecord:
    """Flow ``y(t, 0, x)`` of the shift field on the grid and its asymptotic limits."""

    times: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    dy_dx: np.ndarray = field(repr=False)
    y_out: np.ndarray = field(repr=False)
    y_in: np.ndarray = field(repr=False)
    rate_out: float = float("nan")
    rate_in: float = float("nan")
    dense: Callable | None = None


def _flow_rhs(scenario, L):
    def rhs(t, z):
        n = z.size // 2
        y = z[:n]
        yq = np.mod(y, L)
        by = scenario.b(t, yq)
        if scenario.db_dx is not None:
            dby = scenario.db_dx(t, yq)
        else:
            e = 1e-3
            dby = (-scenario.b(t, yq + 2 * e) + 8 * scenario.b(t, yq + e) - 8 * scenario.b(t, yq - e)
                   + scenario.b(t, yq - 2 * e)) / (12 * e)
        return np.concatenate([by, dby])  # second half: d/dt log(dy/dx)

    return rhs


def flow_straighten(
    scenario: MetricScenario,
    grid: SpatialGrid,
    horizon: float = 20.0,
    step: float = 1e-3,
    rtol: float = 1e-12,
) -> tuple[MetricScenario, FlowRecord]:
    """Remove the shift by the flow ``d y/dt = b(t, y)``, ``y(0) = x``.

    The pulled-back data are ``c^(t,x) = c(t, y)``, ``h^(t,x) = h(t, y) (dy/dx)^2``
    and ``V^(t,x) = V(t, y)``. Returns the reduced scenario and the flow record;
    ``y_out``/``y_in`` are the values at ``t = +/- horizon`` with the fitted
    convergence exponent ``e`` of ``|y(t) - y(t/2)| ~ t^e`` (expected ``1 - mu_prime``).
    """
    x = grid.points
    if scenario.b is None:
        ident = np.tile(x, (1, 1))
        rec = FlowRecord(np.array([0.0]), ident, np.ones_like(ident), x.copy(), x.copy(), dense=None)
        return scenario, rec
    if scenario.mu_prime <= 1:
        raise ValueError(f"shift decay exponent mu_prime must exceed 1, got {scenario.mu_prime}")
    L = grid.length
    rhs = _flow_rhs(scenario, L)
    z0 = np.concatenate([x, np.zeros_like(x)])
    sols = {}
    for sign in (1.0, -1.0):
        sols[sign] = solve_ivp(rhs, (0.0, sign * horizon), z0, method="DOP853", rtol=rtol, atol=rtol,
                               max_step=max(step, 1e-6) * 50, dense_output=True)
        if not sols[sign].success:
            raise RuntimeError(f"flow integration failed: {sols[sign].message}")

    def dense(t):
        s = sols[1.0] if t >= 0 else sols[-1.0]
        z = s.sol(t)
        n = x.size
        return z[:n], np.exp(z[n:])

    def rate(sign):
        ts = horizon * np.array([0.25, 0.5, 1.0])
        ys = [dense(sign * t)[0] for t in ts]
        d1 = np.max(np.abs(ys[1] - ys[0]))
        d2 = np.max(np.abs(ys[2] - ys[1]))
        if d1 <= 0 or d2 <= 0:
            return float("inf")
        return -math.log(d1 / d2) / math.log(2.0)

    sample_t = np.linspace(-horizon, horizon, 201)
    ys = np.array([dense(t)[0] for t in sample_t])
    dys = np.array([dense(t)[1] for t in sample_t])
    if np.any(dys <= 0) or np.any(np.diff(ys, axis=1) <= 0):
        raise ValueError("flow map lost injectivity on the grid (x -> y(t,0,x) not monotone)")
    record = FlowRecord(sample_t, ys, dys, dense(horizon)[0], dense(-horizon)[0],
                        rate_out=rate(1.0), rate_in=rate(-1.0), dense=dense)

    def pulled(fn, with_jac=False):
        def out(t, xq):
            xq = np.asarray(xq)
            if xq.shape != x.shape or not np.allclose(xq, x):
                raise ValueError("reduced scenario is sampled on the flow's grid only")
            y, jac = dense(t)
            v = np.asarray(fn(t, np.mod(y, L)), dtype=float) * np.ones(x.size)
            return v * jac**2 if with_jac else v
        return out

    def pulled_profile(fn_name, direction, with_jac=False):
        y = record.y_out if direction == "out" else record.y_in
        jac = dense(horizon if direction == "out" else -horizon)[1]
        prof = scenario.profile(fn_name, direction)
        return lambda xq: np.asarray(prof(np.mod(y, L)), dtype=float) * (jac**2 if with_jac else 1.0)

    reduced = replace(
        scenario,
        name=scenario.name + "+flow",
        b=None,
        db_dx=None,
        dh_dt=None,
        h=pulled(scenario.h, with_jac=True),
        c=scenario.c if scenario.c is _one else pulled(scenario.c),
        V=pulled(scenario.V),
        h_out=pulled_profile("h", "out", True),
        h_in=pulled_profile("h", "in", True),
        c_out=pulled_profile("c", "out"),
        c_in=pulled_profile("c", "in"),
        V_out=pulled_profile("V", "out"),
        V_in=pulled_profile("V", "in"),
    )
    return reduced, record


# ---------------------------------------------------------------------------
# geometric checks


def nontrapping_check(
    c: Field,
    h: Field,
    box: tuple[float, float, float, float],
    n_rays: int = 16,
    budget_factor: float = 50.0,
    budget: float | None = None,
    seeds: list | None = None,
) -> dict:
    """Trace null bicharacteristics of ``p = xi . g^{-1} xi`` for ``g = -c^2 dt^2 + h dx^2``.

    ``box = (t_min, t_max, x_min, x_max)``. Rays are seeded on ``p = 0`` with
    ``|xi| = 1`` and integrated in an affine parameter normalised so that
    ``dt/ds = 1`` at the seed. A ray is trapped when it is still inside the box
    after the affine budget (default ``budget_factor`` times the box radius).
    """
    t0, t1, x0, x1 = box
    radius = 0.5 * max(t1 - t0, x1 - x0)
    if budget is None:
        budget = budget_factor * radius
    if seeds is None:
        tc = 0.5 * (t0 + t1)
        xs = np.linspace(x0, x1, n_rays // 2 + 2)[1:-1]
        seeds = [(tc, xv, sgn) for xv in xs for sgn in (1.0, -1.0)][:n_rays]
    eps = 1e-6

    def ginv(t, x):
        return -1.0 / c(t, x) ** 2, 1.0 / h(t, x)

    def rhs(s, z):
        t, x, xt, xx = z
        gtt, gxx = ginv(t, x)
        dgtt_dt = (ginv(t + eps, x)[0] - ginv(t - eps, x)[0]) / (2 * eps)
        dgxx_dt = (ginv(t + eps, x)[1] - ginv(t - eps, x)[1]) / (2 * eps)
        dgtt_dx = (ginv(t, x + eps)[0] - ginv(t, x - eps)[0]) / (2 * eps)
        dgxx_dx = (ginv(t, x + eps)[1] - ginv(t, x - eps)[1]) / (2 * eps)
        return [2 * gtt * xt, 2 * gxx * xx,
                -(dgtt_dt * xt**2 + dgxx_dt * xx**2),
                -(dgtt_dx * xt**2 + dgxx_dx * xx**2)]

    def leave(s, z):
        t, x = z[0], z[1]
        return min(t - t0, t1 - t, x - x0, x1 - x)

    leave.terminal = True
    leave.direction = -1
    trapped = []
    escape = []
    for k, (ts, xs_, sgn) in enumerate(seeds):
        cc, hh = float(c(ts, xs_)), float(h(ts, xs_))
        xi_t = -1.0
        xi_x = sgn * math.sqrt(hh) / cc
        nrm = math.hypot(xi_t, xi_x)
        xi_t, xi_x = xi_t / nrm, xi_x / nrm
        scale = 1.0 / (2 * (-1.0 / cc**2) * xi_t)  # makes dt/ds = 1 at the seed
        z0 = [ts, xs_, xi_t * scale, xi_x * scale]
        if budget <= 0:
            trapped.append(True)
            escape.append(float("inf"))
            continue
        sol = solve_ivp(rhs, (0.0, budget), z0, events=leave, rtol=1e-10, atol=1e-12, max_step=radius / 20)
        if sol.status == -1:
            raise RuntimeError(f"ray integration failed for seed {k} at (t, x) = ({ts}, {xs_}): {sol.message}")
        if sol.t_events[0].size:
            trapped.append(False)
            escape.append(float(sol.t_events[0][0]))
        else:
            trapped.append(True)
            escape.append(float("inf"))
    return {"trapped": bool(any(trapped)), "per_ray_trapped": trapped, "escape_times": escape,
            "budget": float(budget), "n_rays": len(seeds)}


def positivity_check(scenario: MetricScenario, grid: SpatialGrid | None = None, n_samples: int = 256) -> dict:
    """Evaluate ``(n-2)/(4(n-1)) (R_{c^{-2}h} - c^2 R_g) + c^2 V`` on both asymptotic profiles."""
    n = scenario.dimension
    if grid is not None:
        x = grid.points
        spacing = grid.spacing
    else:
        L = scenario.params.get("length", 2 * math.pi)
        x = np.linspace(0, L, n_samples, endpoint=False)
        spacing = L / n_samples
    mins = {}
    for d in ("out", "in"):
        c = np.asarray(scenario.profile("c", d)(x), dtype=float) * np.ones(x.size)
        h = np.asarray(scenario.profile("h", d)(x), dtype=float) * np.ones(x.size)
        V = np.asarray(scenario.profile("V", d)(x), dtype=float) * np.ones(x.size)
        val = c**2 * V
        if n > 2:
            Rs, Rg = _static_curvature_terms(h, c, spacing, n)
            val = val + (n - 2) / (4 * (n - 1)) * (Rs - c**2 * Rg)
        mins[d] = float(np.min(val))
    m = min(mins.values())
    return {"min_value": m, "min_out": mins["out"], "min_in": mins["in"],
            "pass": bool(m >= scenario.mass_floor * (1 - 1e-12)), "mass_floor": scenario.mass_floor}


def scalar_curvature_fd(metric: Callable[[np.ndarray], np.ndarray], point: np.ndarray, step: float = 1e-2) -> float:
    """Scalar curvature of ``metric(coords) -> (n, n)`` at ``point`` by 4th-order finite differences.

    Independent of the closed-form expressions used in :func:`positivity_check`;
    intended as a cross-check.
    """
    point = np.asarray(point, dtype=float)
    n = point.size
    offs = np.array([-2, -1, 1, 2], dtype=float)
    wts = np.array([1, -8, 8, -1], dtype=float) / 12.0

    def dmetric(p):
        out = np.zeros((n, n, n))  # out[c, a, b] = d_c g_ab
        for cdir in range(n):
            e = np.zeros(n)
            e[cdir] = step
            out[cdir] = sum(w * metric(p + o * e) for o, w in zip(offs, wts)) / step
        return out

    def christoffel(p):
        g = metric(p)
        gi = np.linalg.inv(g)
        dg = dmetric(p)
        # Gamma^l_{ab} = 1/2 g^{lc} (d_a g_cb + d_b g_ca - d_c g_ab)
        t2 = np.einsum("acb->cab", dg) + np.einsum("bca->cab", dg) - dg
        return 0.5 * np.einsum("lc,cab->lab", gi, t2)

    G = christoffel(point)
    dG = np.zeros((n, n, n, n))  # dG[c, l, a, b] = d_c Gamma^l_ab
    for cdir in range(n):
        e = np.zeros(n)
        e[cdir] = step
        dG[cdir] = sum(w * christoffel(point + o * e) for o, w in zip(offs, wts)) / step
    # Ricci_ab = d_l G^l_ab - d_b G^l_al + G^l_lm G^m_ab - G^l_bm G^m_al
    ric = (np.einsum("llab->ab", dG) - np.einsum("blal->ab", dG)
           + np.einsum("llm,mab->ab", G, G) - np.einsum("lbm,mal->ab", G, G))
    gi = np.linalg.inv(metric(point))
    return float(np.einsum("ab,ab->", gi, ric))
