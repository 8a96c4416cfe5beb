"""Staged pipeline: geometry, diagonalization, evolution, states, scattering, propagators.

Every stage returns named checks (value, tolerance, relation, verdict). A
check with relation ``info`` records a number without a verdict. A stage
that raises is recorded as ``error`` and the stages depending on it are
skipped.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .cache import CacheError, cache_dir, cache_key, cache_load, cache_store
from .config import RunConfig
from .diagonalization import build_pack, riccati_solve, static_transfer
from .discretization import build_grid, smoothing_gauge
from .evolution import (Propagator, asymptotic_generator, cauchy_generator, propagator_table, symplectic_defect,
                        weight_propagation_scan)
from .families import block_density
from .geometry import (assemble_model, conformal_reduce, flow_straighten, make_scenario, nontrapping_check,
                       positivity_check)
from .propagators import (KernelOperator, apply_block_operator, block_kernels, feynman_block,
                          feynman_frequency_proxy, feynman_positivity, feynman_residual, feynman_scalar,
                          feynman_vs_state, jump_defect, scalar_kernels)
from .scattering import commutator_compactness, fredholm_scan, moller
from .states import (TwoPointKernel, causal_kernel, fit_power_law, hadamard_frequency_proxy,
                     kernel_equation_residual, reference_covariances, scattering_covariances, two_point_kernel,
                     vacuum_covariances)
from .timegrid import TimeGrid

__all__ = ["Check", "StageResult", "DiagnosticsBundle", "run_pipeline", "write_outputs", "BUNDLE_SCHEMA",
           "BUNDLE_VERSION", "__version__"]

BUNDLE_SCHEMA = "kgdiag-diagnostics"
BUNDLE_VERSION = "1.0"

# presets whose perturbation decays like a power of t (rate checks apply)
POWER_LAW_PRESETS = {"td"}
# presets for which the smoothing certificate of c_out - c_ref is asserted
SMOOTHING_PRESETS = {"sech"}
SMOOTHING_TOL = 1e-4
# half-width of the window used for the frequency proxies
KERNEL_WINDOW = 16.0
WEIGHT_HORIZON = 20.0


@dataclass
class Check:
    invariant: str
    value: float
    tolerance: float | None
    relation: str
    passed: bool | None
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"invariant": self.invariant, "value": _num(self.value), "tolerance": _num(self.tolerance),
                "relation": self.relation, "passed": self.passed, "detail": _jsonable(self.detail)}


def check(invariant: str, value, tolerance=None, relation: str = "<=", **detail) -> Check:
    value = float(value)
    if relation == "<=":
        ok = bool(value <= tolerance)
    elif relation == ">=":
        ok = bool(value >= tolerance)
    elif relation == "info":
        ok = None
    else:
        raise ValueError(f"unknown relation {relation!r}")
    return Check(invariant, value, tolerance, relation, ok, detail)


def rate_check(invariant: str, rate: float, expected: float, rel: float, **detail) -> Check:
    """Fitted exponent within ``rel`` (relative) of ``expected``."""
    dev = abs(rate - expected) / abs(expected)
    c = check(invariant, dev, rel, "<=", rate=rate, expected=expected, **detail)
    return c


@dataclass
class StageResult:
    name: str
    status: str
    timing_s: float
    checks: list = field(default_factory=list)
    error: str | None = None

    def as_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "timing_s": round(self.timing_s, 3),
                "checks": [c.as_dict() for c in self.checks], "error": self.error}


@dataclass
class DiagnosticsBundle:
    config: dict
    config_hash: str
    stages: list
    artifacts: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict, repr=False)

    @property
    def verdict(self) -> str:
        return "pass" if all(s.status == "pass" for s in self.stages) else "fail"

    def as_dict(self) -> dict:
        return {
            "schema": BUNDLE_SCHEMA,
            "schema_version": BUNDLE_VERSION,
            "versions": {"kgdiag": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "config": _jsonable(self.config),
            "config_hash": self.config_hash,
            "verdict": self.verdict,
            "stages": [s.as_dict() for s in self.stages],
            "artifacts": self.artifacts,
        }


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return str(x)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, complex):
        return [_num(obj.real), _num(obj.imag)]
    return obj


class _Tables:
    """Propagator tables ``U(t, 0)`` per generator, computed once over the union of requested times."""

    def __init__(self, cfg: RunConfig, use_cache: bool):
        self.cfg = cfg
        self.use_cache = use_cache
        self.store: dict[str, dict[float, np.ndarray]] = {}
        self.cache_events: list[str] = []

    @staticmethod
    def _key(t: float) -> float:
        return round(float(t), 10)

    def build(self, name: str, gen, times) -> None:
        times = np.unique(np.round(np.asarray(times, dtype=float), 10))
        have = self.store.setdefault(name, {})
        todo = np.array([t for t in times if self._key(t) not in have])
        if todo.size == 0:
            return
        data = None
        key = cache_key(name, todo, 0.0)
        directory = cache_dir(Path(self.cfg.output_dir) / "cache")
        policy = self.cfg.cache_policy
        if self.use_cache and policy in ("read", "readwrite"):
            try:
                data = cache_load(directory, key, self.cfg.config_hash())
                if data is not None:
                    self.cache_events.append(f"hit {key}")
            except CacheError as exc:
                self.cache_events.append(f"refused {key}: {exc}")
        if data is None:
            data = propagator_table(gen, todo)
            if self.use_cache and policy in ("write", "readwrite"):
                cache_store(directory, key, self.cfg.config_hash(), data)
                self.cache_events.append(f"stored {key}")
        for t, U in zip(todo, data):
            have[self._key(t)] = U

    def get(self, name: str, times) -> np.ndarray:
        have = self.store[name]
        return np.array([have[self._key(t)] for t in np.atleast_1d(times)])


@dataclass
class _Context:
    cfg: RunConfig
    grid: object = None
    times: TimeGrid | None = None
    scenario: object = None
    model: object = None
    solution: object = None
    pack: object = None
    generators: dict = field(default_factory=dict)
    tables: _Tables | None = None
    vacuum_out: object = None
    vacuum_in: object = None
    reference: object = None
    limits: dict = field(default_factory=dict)
    moller: dict = field(default_factory=dict)
    export: dict = field(default_factory=dict)

    @property
    def static(self) -> bool:
        return self.scenario.hypothesis == "static"

    @property
    def name(self) -> str:
        return self.cfg.scenario

    def horizons(self) -> list[float]:
        out, h = [], self.cfg.first_horizon
        while h <= self.cfg.horizon * (1 + 1e-12):
            out.append(h)
            h *= self.cfg.horizon_ratio
        return out

    def kernel_times(self) -> np.ndarray:
        """Window ``[-W, W]`` (``W = min(T, 16)``) sampled at least twice per period of the top frequency."""
        half = min(self.cfg.horizon, KERNEL_WINDOW)
        need = math.ceil(2 * half * 2 * float(self.frequencies().max()) / math.pi) + 1
        return np.linspace(-half, half, max(self.cfg.kernel_samples, need))

    def fine_times(self) -> tuple[np.ndarray, np.ndarray]:
        """Uniform fine grid around 0 resolving the top frequency (``w h <= 0.2``) and three source times on it."""
        dt = self.cfg.time_step
        h = dt / max(4, math.ceil(dt * float(self.frequencies().max()) / 0.2 - 1e-9))
        half = int(round(min(1.5, self.cfg.horizon / 4) / h))
        ts = h * np.arange(-half, half + 1)
        ss = ts[[half // 2, half, half + half // 2]]
        return ts, ss

    def frequencies(self) -> np.ndarray:
        F = self.grid.fourier_matrix()
        return np.sqrt(np.maximum(np.real(np.diag(F @ self.model.a_out.entries @ F.conj().T)), 0.0))


def _stage_geometry(ctx: _Context) -> list[Check]:
    cfg = ctx.cfg
    checks = []
    ctx.grid = build_grid(cfg.n_points, cfg.length)
    ctx.times = TimeGrid.symmetric(cfg.horizon, cfg.time_step)
    sc = make_scenario(cfg.scenario, **cfg.scenario_params())
    if sc.b is not None:
        sc, flow = flow_straighten(sc, ctx.grid, horizon=cfg.horizon)
        checks.append(check("flow: exponent of |y(t) - y(t/2)| (expected 1 - mu')", flow.rate_out, None, "info"))
    if not sc.is_model_form:
        sc, _ = conformal_reduce(sc, ctx.grid)
    ctx.scenario = sc
    pos = positivity_check(sc, ctx.grid)
    checks.append(check("(pos): min of reduced asymptotic potential minus mass floor", pos["min_value"] - pos["mass_floor"],
                        -1e-12 * pos["mass_floor"], ">=", mass_floor=pos["mass_floor"]))
    ctx.model = assemble_model(sc, ctx.grid, ctx.times)
    checks.append(check("a(t) symmetrization defect", ctx.model.symmetrization_defect, 1e-10))
    box = (-cfg.horizon, cfg.horizon, 0.0, cfg.length)
    nt = nontrapping_check(sc.c, sc.h, box, n_rays=8)
    checks.append(check("(nt): trapped rays in the sampled window", sum(nt["per_ray_trapped"]), 0, "<="))
    return checks


def _stage_diagonalization(ctx: _Context) -> list[Check]:
    cfg, tol = ctx.cfg, ctx.cfg.tolerances
    sol = riccati_solve(ctx.model, order=cfg.riccati_order, gap_floor=cfg.gap_floor)
    ctx.solution = sol
    ctx.pack = build_pack(sol, ctx.model)
    checks = []
    g = sol.residual_gauge(0.0, (0, 1, 2), ctx.grid)
    a_scale = np.linalg.norm(ctx.model.a_out.entries, 2)
    worst = float(max(sol.residual_norms("plus").max(), sol.residual_norms("minus").max()) / a_scale)
    checks.append(check("max_t |Riccati residual| / |a_out|", worst, tol["identity"] if ctx.static else None,
                        "<=" if ctx.static else "info", gauge_t0=g.as_dict()))
    inv = ctx.pack.invariant_report()
    checks.append(check("T T^{-1} = 1", inv["T_Tinv_defect"], tol["identity"]))
    checks.append(check("T^* q T = q_ad", inv["symplectic_T_defect"], tol["symplectic"]))
    checks.append(check("H_d - H_d^* = i r", inv["H_d_skew_minus_ir_defect"], tol["identity"]))
    checks.append(check("Riccati iteration diverged", float(sol.diverged), 0.0, "<="))
    t = ctx.times.values
    res = sol.residual_norms("plus")
    vad = ctx.pack.V_ad_norms()
    ctx.export["riccati"] = (t, res, sol.residual_norms("minus"), vad)
    if ctx.name in POWER_LAW_PRESETS:
        sel = t >= 5.0
        for label, series in (("Riccati residual", res), ("V_ad", vad)):
            rate = fit_power_law(t[sel], series[sel])
            checks.append(rate_check(f"{label} decay exponent vs -(1+delta)", rate, -(1 + ctx.scenario.delta),
                                     tol["rate_relative"]))
    return checks


def _generators(ctx: _Context) -> None:
    m = ctx.model
    if ctx.static:
        ctx.generators["H"] = asymptotic_generator(m, "out", "cauchy")
        ctx.generators["H_ad"] = asymptotic_generator(m, "out", "ad")
        ctx.generators["H_d"] = ctx.generators["H_ad"]
    else:
        ctx.generators["H"] = cauchy_generator(m)
        ctx.generators["H_ad"] = ctx.pack.H_ad
        ctx.generators["H_d"] = ctx.pack.H_d
    for d in ("out", "in"):
        ctx.generators[f"H_ad_{d}"] = asymptotic_generator(m, d, "ad")
        ctx.generators[f"H_{d}"] = asymptotic_generator(m, d, "cauchy")


def _stage_evolution(ctx: _Context) -> list[Check]:
    cfg, tol = ctx.cfg, ctx.cfg.tolerances
    _generators(ctx)
    ctx.tables = _Tables(cfg, cfg.cache_policy != "off")
    T = cfg.horizon
    hz = ctx.horizons()
    ts = ctx.kernel_times()
    fine, _ = ctx.fine_times()
    common = np.concatenate([[0.0, T / 2, -T / 2], hz, -np.array(hz), fine])
    ctx.tables.build("H", ctx.generators["H"], np.concatenate([common, ts]))
    scan_times = np.linspace(0.0, min(WEIGHT_HORIZON, T), 41)
    if ctx.scenario.hypothesis == "std":
        common = np.concatenate([common, scan_times])
    ctx.tables.build("H_ad", ctx.generators["H_ad"], common)
    ctx.tables.build("H_d", ctx.generators["H_d"], np.concatenate([[0.0, T, -T], ts, fine]))
    checks = []
    H = ctx.generators["H"]
    U = {t: ctx.tables.get("H", [t])[0] for t in (T / 2, -T / 2)}
    U_ts = U[T / 2] @ np.linalg.inv(U[-T / 2])
    dens = lambda t: block_density(H.density_at(t))
    prop = Propagator(T / 2, -T / 2, U_ts, "H", "cauchy", dens(T / 2), dens(-T / 2))
    checks.append(check(f"symplectic defect U({T / 2:g}, {-T / 2:g})", symplectic_defect(prop, grid=ctx.grid),
                        tol["symplectic"]))
    Uad = ctx.tables.get("H_ad", [T / 2])[0] @ np.linalg.inv(ctx.tables.get("H_ad", [-T / 2])[0])
    if ctx.static:
        Tt, Tti = static_transfer(ctx.model.a_out)
        Ta, Tb = Tt, Tti
    else:
        Ta, Tb = ctx.pack.T_at(T / 2), ctx.pack.T_inv_at(-T / 2)
    cross = np.linalg.norm(U_ts - Ta @ Uad @ Tb, 2) / np.linalg.norm(U_ts, 2)
    checks.append(check("U vs T U_ad T^{-1} cross-validation", cross, tol["cross_validation"]))
    if ctx.scenario.hypothesis == "std":
        Had = ctx.generators["H_ad"]
        scan = weight_propagation_scan(Had, 1.0, 0.5 * min(1.0, ctx.scenario.delta / 2), scan_times[-1], ctx.grid,
                                       factor=tol["weight_factor"], table=ctx.tables.get("H_ad", scan_times))
        checks.append(check("weight propagation sup (ad frame)", max(scan.sup.values()), tol["weight_factor"],
                            **scan.as_dict()))
    return checks


def _stage_states(ctx: _Context) -> list[Check]:
    cfg, tol = ctx.cfg, ctx.cfg.tolerances
    g = ctx.grid
    checks = []
    ctx.vacuum_out = vacuum_covariances(ctx.model.a_out)
    ctx.vacuum_in = vacuum_covariances(ctx.model.a_in)
    checks.append(check("vacuum route independence", ctx.vacuum_out.meta["route_defect"], 1e-10))
    ref = reference_covariances(ctx.pack, 0.0)
    if ctx.static:
        checks.append(check("c+_ref equals the vacuum projection", np.abs(ref.c_plus - ctx.vacuum_out.c_plus).max(),
                            tol["identity"]))
    ctx.reference = ref
    pairs = [ref]
    H = ctx.generators["H"]
    hz = ctx.horizons()
    if len(hz) >= 1:
        for d, vac, sign in (("out", ctx.vacuum_out, 1.0), ("in", ctx.vacuum_in, -1.0)):
            table = ctx.tables.get("H", [sign * h for h in hz])
            lim = scattering_covariances(d, H, vac, horizons=hz, grid=g, table=table)
            ctx.limits[d] = lim
            pairs.append(lim.pair)
            if ctx.name in POWER_LAW_PRESETS and len(hz) >= 3:
                checks.append(rate_check(f"c_{d} limit difference exponent vs -delta", lim.rate,
                                         -ctx.scenario.delta, tol["rate_relative"], history=lim.as_dict()))
            else:
                checks.append(check(f"c_{d} limit last difference", lim.differences[-1] if lim.differences else 0.0,
                                    None, "info", history=lim.as_dict()))
    for p in pairs:
        r = p.report(g)
        checks.append(check(f"c+ + c- = 1 ({p.provenance})", r["complement_defect"], tol["identity"]))
        checks.append(check(f"c^2 = c ({p.provenance})", r["idempotency_defect"], tol["idempotency"]))
        checks.append(check(f"lambda+- >= 0 ({p.provenance})", min(r["lambda_plus_min_eig"], r["lambda_minus_min_eig"]),
                            -tol["psd"], ">="))
    if "out" in ctx.limits:
        gauge = smoothing_gauge(ctx.limits["out"].pair.c_plus - ref.c_plus, (0, 1, 2, 3), g)
        assert_it = ctx.name in SMOOTHING_PRESETS
        checks.append(check("c+_out - c+_ref relative gauge at m=3", gauge.relative(3), SMOOTHING_TOL if assert_it else None,
                            "<=" if assert_it else "info", gauge=gauge.as_dict()))
    # kernels on the coarse window
    ts = ctx.kernel_times()
    Ut = ctx.tables.get("H", ts)
    U0 = ctx.tables.get("H", [0.0])
    lp = two_point_kernel(ref, H, ts, [0.0], "+", U_t=Ut, U_s=U0)
    lm = two_point_kernel(ref, H, ts, [0.0], "-", U_t=Ut, U_s=U0)
    G = causal_kernel(H, ts, [0.0], U_t=Ut, U_s=U0)
    checks.append(check("Lambda+ - Lambda- = i G", np.abs(lp.blocks - lm.blocks - 1j * G.blocks).max(), tol["identity"]))
    ctx.export["lambda_plus"] = lp
    freqs = ctx.frequencies()
    had = {}
    for p in pairs:
        k = lp if p is ref else two_point_kernel(p, H, ts, [0.0], "+", U_t=Ut, U_s=U0)
        hp = hadamard_frequency_proxy(k, g, min_oscillations=4.0, frequencies=freqs)
        had[p.provenance] = hp
        checks.append(check(f"Hadamard proxy: min positive-frequency fraction ({p.provenance})",
                            hp["min_resolved_fraction"], tol["hadamard_fraction"], ">="))
    ctx.export["hadamard"] = (freqs, had)
    fine, ss = ctx.fine_times()
    lf = two_point_kernel(ref, H, fine, ss, "+", U_t=ctx.tables.get("H", fine), U_s=ctx.tables.get("H", ss))
    res = max(kernel_equation_residual(lf, ctx.model, column=j) for j in range(ss.size))
    checks.append(check("P Lambda+ interior residual", res, tol["kernel_equation"]))
    return checks


def _stage_scattering(ctx: _Context) -> list[Check]:
    cfg, tol = ctx.cfg, ctx.cfg.tolerances
    hz = ctx.horizons()
    checks = []
    n = ctx.grid.n_points
    for d, sign in (("out", 1.0), ("in", -1.0)):
        table = ctx.tables.get("H_ad", [sign * h for h in hz])
        w = moller(d, ctx.generators["H_ad"], ctx.generators[f"H_ad_{d}"], horizons=hz, table=table)
        ctx.moller[d] = w
        r = w.report()
        checks.append(check(f"W_{d} W_{d}^{{-1}} = 1", r["inverse_defect"], tol["moller_inverse"]))
        checks.append(check(f"W_{d}^{{-1}} = W_{d}^dagger", r["inverse_vs_adjoint"], tol["moller_inverse"]))
        if ctx.static:
            checks.append(check(f"W_{d} = 1 (static)", np.abs(w.w - np.eye(2 * n)).max(), tol["identity"]))
        if ctx.name in POWER_LAW_PRESETS and len(hz) >= 3:
            checks.append(rate_check(f"W_{d} difference exponent vs -delta", w.rate, -ctx.scenario.delta,
                                     tol["rate_relative"], history=w.convergence_history))
        else:
            checks.append(check(f"W_{d} last difference", w.convergence_history[-1][1] if w.convergence_history else 0.0,
                                None, "info", history=w.convergence_history))
    if ctx.name in POWER_LAW_PRESETS and len(hz) >= 3:
        table = ctx.tables.get("H", hz)
        wc = moller("out", ctx.generators["H"], ctx.generators["H_out"], horizons=hz, table=table)
        checks.append(rate_check("Cauchy W_out difference exponent vs -delta", wc.rate, -ctx.scenario.delta,
                                 tol["rate_relative"], history=wc.convergence_history))
        T0 = ctx.pack.T_at(0.0)
        _, Tout_inv = static_transfer(ctx.model.a_out)
        chain = np.linalg.norm(wc.w - T0 @ ctx.moller["out"].w @ Tout_inv, 2)
        checks.append(check("chain identity defect at the last horizon (limit identity)", chain, None, "info"))
    pp = np.diag(np.r_[np.ones(n), np.zeros(n)])
    fr = fredholm_scan(ctx.moller["out"], ctx.moller["in"], pp, np.eye(2 * n) - pp, rel_threshold=tol["svd_relative"],
                       k_threshold=tol["compact_threshold"])
    ctx.export["fredholm"] = fr
    checks.append(check("Fredholm kernel_dim - cokernel_dim", abs(fr.kernel_dim - fr.cokernel_dim), 0, "<=",
                        report=fr.as_dict()))
    checks.append(check("Fredholm kernel_dim", fr.kernel_dim, None, "info"))
    if not ctx.static:
        orders = fr.K2["orders_of_decay"]
        checks.append(check("W_F^dagger W_F - 1 singular value decay (orders)", orders, tol["decay_orders"], ">="))
    if ctx.scenario.hypothesis == "std":
        cc = commutator_compactness(ctx.moller["out"], ctx.grid, orders=(0, 1, 2),
                                    weights=[(1, 0.5 * ctx.scenario.delta / 2)], threshold=tol["compact_threshold"])
        s = cc["commutator"]
        ctx.export["commutator"] = s
        checks.append(check("[W, pi+] singular value decay (orders)", s["orders_of_decay"], tol["decay_orders"], ">="))
        checks.append(check("[W, pi+] effective rank", s["effective_rank"], n // 4, "<="))
        checks.append(check("W_F^dagger W_F - 1 effective rank", fr.K2["effective_rank"], n // 4, "<="))
    return checks


class _StaticPack:
    """Pack stand-in for the exactly static case: closed-form ``T`` and the static ``H_d``."""

    def __init__(self, ctx: _Context):
        self.T0, self.T0i = static_transfer(ctx.model.a_out)
        self.H_d = ctx.generators["H_d"]

    def T_at(self, t):
        return self.T0

    def T_inv_at(self, t):
        return self.T0i


def _feynman_columns(ctx: _Context, pack, t_list, s_list, boundary=None) -> tuple[KernelOperator, list]:
    """Scalar ``G_F`` built one source time at a time (block kernels are ``2N x 2N`` per pair)."""
    Ud_t = ctx.tables.get("H_d", t_list)
    cols, metas = [], []
    for s in s_list:
        gb = feynman_block(pack, t_list, [s], Ud_t, ctx.tables.get("H_d", [s]), boundary_times=boundary,
                           U_boundary=None if boundary is None else ctx.tables.get("H_d", boundary[::-1]))
        cols.append(feynman_scalar(pack, gb).blocks)
        metas.append(gb.meta)
    blocks = np.concatenate(cols, axis=1)
    return KernelOperator("feynman", "scalar", np.asarray(t_list), np.asarray(s_list), blocks), metas


def _stage_propagators(ctx: _Context) -> list[Check]:
    cfg, tol = ctx.cfg, ctx.cfg.tolerances
    g = ctx.grid
    n = g.n_points
    checks = []
    H = ctx.generators["H"]
    fine, ss = ctx.fine_times()
    dt = fine[1] - fine[0]
    Ut, Us = ctx.tables.get("H", fine), ctx.tables.get("H", ss)
    sk = scalar_kernels(H, fine, ss, Ut, Us)
    ret, adv = sk["retarded"], sk["advanced"]
    del sk
    before = fine[:, None] < ss[None, :] - 0.5 * dt
    scale = np.abs(ret.blocks).max()
    checks.append(check("G+ vanishes before the source", np.abs(ret.blocks[before]).max() / scale, 1e-12))
    checks.append(check("G+ derivative jump = 1", jump_defect(ret, np.eye(n)), tol["kernel_equation"]))
    checks.append(check("G- derivative jump = 1", jump_defect(adv, np.eye(n)), tol["kernel_equation"]))
    off = np.abs(fine[:, None] - ss[None, :]) <= 6.5 * dt
    res = kernel_equation_residual(TwoPointKernel(fine, ss, ret.blocks, "G+", "retarded"), ctx.model, exclude=off)
    checks.append(check("P G+ = 0 off the diagonal", res, tol["kernel_equation"]))
    # ad-frame kernels, one source column at a time
    Had = ctx.generators["H_ad"]
    Uad_t = ctx.tables.get("H_ad", fine)
    block_res, block_jump = 0.0, 0.0
    for j, s in enumerate(ss):
        bk = block_kernels(Had, fine, [s], Uad_t, ctx.tables.get("H_ad", [s]))["retarded"]
        R = apply_block_operator(Had, bk.blocks, fine)
        keep = ~off[:, [j]]
        keep[:6] = False
        keep[-6:] = False
        block_res = max(block_res, np.abs(R[keep]).max() / np.abs(bk.blocks).max())
        block_jump = max(block_jump, jump_defect(bk, 1j * np.eye(2 * n), derivative=0, continuous=False))
    del Uad_t, bk, R
    checks.append(check("P_ad G_ad+ = 0 off the diagonal", block_res, tol["kernel_equation"]))
    checks.append(check("G_ad+ value jump = i", block_jump, tol["kernel_equation"]))
    pack = _StaticPack(ctx) if ctx.static else ctx.pack
    gf, metas = _feynman_columns(ctx, pack, fine, ss, boundary=(-cfg.horizon, cfg.horizon))
    checks.append(check("G_ad_F jump = i", max(m["jump_defect"] for m in metas), tol["identity"]))
    checks.append(check("pi- U_d(0, T) G_ad_F(T, s) = 0", max(m["boundary_out_defect"] for m in metas),
                        tol["boundary"]))
    checks.append(check("pi+ U_d(0, -T) G_ad_F(-T, s) = 0", max(m["boundary_in_defect"] for m in metas),
                        tol["boundary"]))
    checks.append(check("G_F derivative jump = 1", jump_defect(gf, np.eye(n)), tol["kernel_equation"]))
    fres = feynman_residual(gf, ctx.model, g)
    checks.append(check("P G_F - 1 Fourier tail", fres["fourier_tail"], tol["fourier_tail"],
                        gauge=fres["gauge"].as_dict(), relative_residual=fres["relative_residual"]))
    if ctx.static:
        w = ctx.frequencies()
        F = g.fourier_matrix()
        exact = -1j / (2 * w) * np.exp(1j * w * np.abs(fine[:, None, None] - ss[None, :, None]))
        got = np.diagonal(F @ gf.blocks @ F.conj().T, axis1=2, axis2=3)
        checks.append(check("G_F equals the mode Feynman function", np.abs(got - exact).max(), tol["identity"]))
    # square sample for the Hermitian-part identity and positivity
    tq = np.linspace(-cfg.horizon / 4, cfg.horizon / 4, 21)
    ctx.tables.build("H_d", ctx.generators["H_d"], tq)
    Uq = ctx.tables.get("H_d", tq)
    gbq = feynman_block(pack, tq, tq, Uq, Uq)
    checks.append(check("i^{-1}(G_ad_F - G_ad_F^*) = U_d q_ad U_d^{-1}", gbq.meta["hermitian_identity_defect"],
                        tol["identity"]))
    gq = feynman_scalar(pack, gbq)
    del gbq
    pos = feynman_positivity(gq, ctx.model.a.density[ctx.times.index_of(0.0)] if ctx.static else None)
    checks.append(check("i (G_F - G_F^*) >= 0 (relative min eigenvalue)", pos["relative_min"], -tol["psd"], ">=",
                        **pos))
    lam = two_point_kernel(ctx.reference, H, fine, ss, "+", U_t=Ut, U_s=Us)
    lamK = KernelOperator("reference", "scalar", fine, ss, lam.blocks)
    far = int(np.argmin(np.abs(fine - (ss[-1] + 0.5))))
    fv = feynman_vs_state(gf, lamK, ret, adv, ctx.model, g, tol=tol["kernel_equation"],
                          pairs=[(0, 0), (far, 2), (fine.size // 8, 1)])
    checks.append(check("reference combination selected by P G = 1", 0.0, None, "info", chosen=fv["chosen"],
                        candidates=fv["candidates"]))
    if ctx.static:
        checks.append(check("G_F minus the reference combination (static)", fv["max_difference"],
                            tol["cross_validation"]))
    else:
        assert_it = ctx.name in SMOOTHING_PRESETS
        checks.append(check("G_F minus the reference combination, relative gauge at m=3", fv["gauge"].relative(3),
                            SMOOTHING_TOL if assert_it else None, "<=" if assert_it else "info",
                            gauge=fv["gauge"].as_dict()))
        ts = ctx.kernel_times()
        freqs = ctx.frequencies()
        gfw, _ = _feynman_columns(ctx, pack, ts, [ts[0], ts[-1]])
        fut = feynman_frequency_proxy(gfw, g, "future", 0, frequencies=freqs, min_oscillations=4.0)
        past = feynman_frequency_proxy(gfw, g, "past", 1, frequencies=freqs, min_oscillations=4.0)
        checks.append(check("G_F frequency proxy for t > s (positive)", fut["min_resolved_fraction"],
                            tol["hadamard_fraction"], ">="))
        checks.append(check("G_F frequency proxy for t < s (negative)", past["min_resolved_fraction"],
                            tol["hadamard_fraction"], ">="))
    return checks


STAGES = [
    ("geometry", _stage_geometry, ()),
    ("diagonalization", _stage_diagonalization, ("geometry",)),
    ("evolution", _stage_evolution, ("diagonalization",)),
    ("states", _stage_states, ("evolution",)),
    ("scattering", _stage_scattering, ("evolution",)),
    ("propagators", _stage_propagators, ("states",)),
]


def run_pipeline(cfg: RunConfig, stages=None) -> DiagnosticsBundle:
    """Run the stages in order; a raising stage is recorded and its dependents skipped."""
    ctx = _Context(cfg)
    results = []
    status = {}
    wanted = set(stages) if stages else None
    for name, fn, deps in STAGES:
        if wanted is not None and name not in wanted and not any(name in _deps_of(w) for w in wanted):
            continue
        if any(status.get(d) in ("error", "skipped") for d in deps):
            results.append(StageResult(name, "skipped", 0.0, [], "dependency failed"))
            status[name] = "skipped"
            continue
        t0 = time.perf_counter()
        try:
            checks = fn(ctx)
            st = "pass" if all(c.passed is not False for c in checks) else "fail"
            results.append(StageResult(name, st, time.perf_counter() - t0, checks))
        except Exception as exc:  # carried into the bundle with the stage name
            st = "error"
            results.append(StageResult(name, st, time.perf_counter() - t0, [], f"{type(exc).__name__}: {exc}"))
        status[name] = st
    bundle = DiagnosticsBundle(cfg.as_dict(), cfg.config_hash(), results)
    bundle.tables = ctx.export
    if ctx.tables is not None:
        bundle.artifacts["cache_events"] = ctx.tables.cache_events
    return bundle


def _deps_of(name: str) -> set:
    deps = {n: d for n, _, d in STAGES}
    out, todo = set(), list(deps.get(name, ()))
    while todo:
        d = todo.pop()
        if d not in out:
            out.add(d)
            todo.extend(deps[d])
    return out


UNITS = {"t": "time", "s": "time", "x": "length", "y": "length"}


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_outputs(bundle: DiagnosticsBundle, directory: str | Path, grid=None) -> dict:
    """Write ``bundle.json``, CSV tables with unit headers and a gnuplot script; returns the file map."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    ex = bundle.tables
    if "riccati" in ex:
        t, rp, rm, vad = ex["riccati"]
        p = out / "riccati_residual.csv"
        _write_csv(p, ["t [time]", "residual_plus [1/time^2]", "residual_minus [1/time^2]", "V_ad [1/time]"],
                   zip(t, rp, rm, vad))
        files["riccati_residual"] = p.name
    if "lambda_plus" in ex:
        k = ex["lambda_plus"]
        n = k.blocks.shape[-1]
        stride = max(1, n // 8)
        idx = range(0, n, stride)
        xs = grid.points if grid is not None else np.arange(n)
        p = out / "kernel_lambda_plus.csv"
        rows = ((t, s, xs[i], xs[j], k.blocks[a, b, i, j].real, k.blocks[a, b, i, j].imag)
                for a, t in enumerate(k.t_list) for b, s in enumerate(k.s_list) for i in idx for j in idx)
        _write_csv(p, ["t [time]", "s [time]", "x [length]", "y [length]", "re [1]", "im [1]"], rows)
        files["kernel_lambda_plus"] = p.name
    if "hadamard" in ex:
        freqs, had = ex["hadamard"]
        p = out / "hadamard_fractions.csv"
        rows = ((prov, j, freqs[j], hp["positive_fraction"][j], int(hp["resolved"][j]))
                for prov, hp in had.items() for j in range(freqs.size))
        _write_csv(p, ["state [label]", "mode [index]", "omega [1/time]", "fraction [1]", "resolved [bool]"], rows)
        files["hadamard_fractions"] = p.name
    spectra = []
    if "fredholm" in ex:
        fr = ex["fredholm"]
        spectra += [("A", j, s) for j, s in enumerate(fr.singular_values)]
        spectra += [("K2", j, s) for j, s in enumerate(fr.K2["singular_values"])]
    if "commutator" in ex:
        spectra += [("commutator", j, s) for j, s in enumerate(ex["commutator"]["singular_values"])]
    if spectra:
        p = out / "singular_values.csv"
        _write_csv(p, ["operator [label]", "index [1]", "sigma [1]"], spectra)
        files["singular_values"] = p.name
    gp = out / "plots.gp"
    gp.write_text(_gnuplot_script(files))
    files["gnuplot"] = gp.name
    bundle.artifacts["files"] = dict(files)
    bp = out / "bundle.json"
    bp.write_text(json.dumps(bundle.as_dict(), indent=2, sort_keys=True))
    files["bundle"] = bp.name
    return files


def _gnuplot_script(files: dict) -> str:
    lines = ["# gnuplot -p plots.gp", "set datafile separator ','", "set key autotitle columnhead", "set logscale y"]
    if "riccati_residual" in files:
        lines += ["set title 'Riccati residual and V_ad'", "set xlabel 't'",
                  f"plot '{files['riccati_residual']}' using 1:2 with lines, '' using 1:4 with lines", "pause -1"]
    if "singular_values" in files:
        lines += ["set title 'singular values'", "set xlabel 'index'",
                  f"plot '{files['singular_values']}' using 2:(strcol(1) eq 'K2' ? $3 : 1/0) with points title 'K2', "
                  f"'' using 2:(strcol(1) eq 'commutator' ? $3 : 1/0) with points title '[W, pi+]'", "pause -1"]
    if "hadamard_fractions" in files:
        lines += ["unset logscale y", "set title 'positive-frequency fraction'", "set xlabel 'omega'",
                  f"plot '{files['hadamard_fractions']}' using 3:4 with points", "pause -1"]
    return "\n".join(lines) + "\n"
