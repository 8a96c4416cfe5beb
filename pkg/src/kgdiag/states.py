"""Covariances of quasi-free states on Cauchy data and their two-point kernels.

Cauchy data are pairs ``(phi, i^{-1} d_t phi)``. A pure state at time ``t0``
is a pair of complementary projections ``c+``, ``c-``; the forms
``lambda+- = +-q c+-`` are positive. Kernels are compressed to the field
component,

    Lambda+-(t, s) = +- pi0 U(t, 0) c+-(0) U(0, s) pi1^*,

so that ``Lambda+ - Lambda- = i G`` with ``G(t, s) = -i pi0 U(t, s) pi1^*``
the causal propagator. For a static mode of frequency ``w`` this gives
``Lambda+(t, s) = exp(i w (t - s)) / (2 w)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import OperatorMatrix, SpatialGrid, hermitian_function, smoothing_gauge
from .evolution import Propagator, StaticGenerator, propagator_table, symplectic_form
from .families import assemble_blocks, block_density
from .timegrid import TimeGrid, apply_time_derivative, interpolate

__all__ = [
    "CovariancePair",
    "TwoPointKernel",
    "reference_covariances",
    "evolve_covariances",
    "scattering_covariances",
    "ScatteringLimit",
    "vacuum_covariances",
    "two_point_kernel",
    "causal_kernel",
    "kernel_equation_residual",
    "hadamard_frequency_proxy",
    "fit_power_law",
]


def _balance(grid: SpatialGrid | None, n: int):
    """Charge-balancing ``E = diag(<D>^{1/2}, <D>^{-1/2})`` and its inverse (identity without a grid)."""
    if grid is None:
        e = np.eye(2 * n)
        return e, e
    w = (1.0 + grid.wavenumbers**2) ** 0.25
    E = grid.fourier_multiplier(w)
    Ei = grid.fourier_multiplier(1.0 / w)
    z = np.zeros((n, n))
    return assemble_blocks(E, z, z, Ei), assemble_blocks(Ei, z, z, E)


@dataclass(eq=False)
class CovariancePair:
    """Covariances ``c+``, ``c-`` at ``reference_time`` with the block density used for adjoints."""

    c_plus: np.ndarray = field(repr=False)
    c_minus: np.ndarray = field(repr=False)
    reference_time: float = 0.0
    provenance: str = "ref"
    density: np.ndarray | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.c_plus.shape[0] // 2

    def report(self, grid: SpatialGrid | None = None) -> dict:
        """Complement and idempotency defects and the smallest eigenvalues of ``lambda+-``.

        Eigenvalues are taken in the slice product after charge balancing
        (when a grid is given) so that both components carry unit weight.
        """
        n = self.n
        eye = np.eye(2 * n)
        d = self.density if self.density is not None else np.ones(2 * n)
        s = np.sqrt(d)
        q = symplectic_form(n, "cauchy")
        E, Ei = _balance(grid, n)
        out = {
            "complement_defect": float(np.linalg.norm(self.c_plus + self.c_minus - eye, 2)),
            "idempotency_defect": float(max(
                np.linalg.norm(Ei @ (c @ c - c) @ E, 2) for c in (self.c_plus, self.c_minus))),
        }
        for name, c, sign in (("plus", self.c_plus, 1.0), ("minus", self.c_minus, -1.0)):
            form = sign * (s[:, None] * (q @ c) / s[None, :])
            form = Ei.conj().T @ form @ Ei
            herm = 0.5 * (form + form.conj().T)
            out[f"lambda_{name}_min_eig"] = float(np.linalg.eigvalsh(herm)[0])
            out[f"lambda_{name}_hermiticity_defect"] = float(np.linalg.norm(form - form.conj().T, 2))
        return out

    def passes(self, grid: SpatialGrid | None = None, complement_tol=1e-8, idem_tol=1e-6, psd_tol=1e-8) -> bool:
        r = self.report(grid)
        return (r["complement_defect"] <= complement_tol and r["idempotency_defect"] <= idem_tol
                and min(r["lambda_plus_min_eig"], r["lambda_minus_min_eig"]) >= -psd_tol)


def reference_covariances(pack, t0: float) -> CovariancePair:
    """``c+-_ref(t0) = T(t0) pi+- T(t0)^{-1}``."""
    T, Ti = pack.T_at(t0), pack.T_inv_at(t0)
    n = T.shape[0] // 2
    p_plus = np.diag(np.r_[np.ones(n), np.zeros(n)])
    p_minus = np.eye(2 * n) - p_plus
    j = pack.times.index_of(t0)
    d = block_density(pack.model.a.density[j])
    return CovariancePair(T @ p_plus @ Ti, T @ p_minus @ Ti, t0, "ref", d)


def evolve_covariances(pair: CovariancePair, U: Propagator) -> CovariancePair:
    """``c+-(t) = U(t, s) c+-(s) U(s, t)`` with ``s`` the pair's reference time."""
    if abs(U.s - pair.reference_time) > 1e-9:
        raise ValueError(f"propagator starts at {U.s}, covariances live at {pair.reference_time}")
    Ui = np.linalg.inv(U.block)
    d = U.density_t if U.density_t is not None else pair.density
    return CovariancePair(U.block @ pair.c_plus @ Ui, U.block @ pair.c_minus @ Ui, U.t, pair.provenance, d,
                          dict(pair.meta))


def vacuum_covariances(a_static: OperatorMatrix) -> CovariancePair:
    """Spectral projections of ``H = [[0, 1], [a, 0]]`` onto positive/negative spectrum.

    The eigenprojection route is cross-checked against ``T pi+- T^{-1}`` with
    ``b+- = +-a^{1/2}``, which reduces to ``1/2 [[1, +-eps^{-1}], [+-eps, 1]]``;
    the discrepancy is stored in ``meta["route_defect"]``.
    """
    a = a_static.entries
    d = a_static.product.density
    n = a.shape[0]
    lam_min = float(np.min(np.linalg.eigvalsh(
        0.5 * (np.sqrt(d)[:, None] * a / np.sqrt(d)[None, :] + (np.sqrt(d)[:, None] * a / np.sqrt(d)[None, :]).conj().T))))
    if lam_min <= 0:
        raise ValueError(f"vacuum covariances need a positive static operator; smallest eigenvalue {lam_min:.6g}")
    H = assemble_blocks(np.zeros((n, n)), np.eye(n), a, np.zeros((n, n)))
    w, V = np.linalg.eig(H)
    Vi = np.linalg.inv(V)
    pos = (w.real > 0).astype(float)
    c_plus = (V * pos[None, :]) @ Vi
    c_minus = (V * (1 - pos)[None, :]) @ Vi
    eps = hermitian_function(a, d, np.sqrt)
    eps_inv = hermitian_function(a, d, lambda lam: 1.0 / np.sqrt(lam))
    eye = np.eye(n)
    route = 0.5 * assemble_blocks(eye, eps_inv, eps, eye)
    defect = float(max(np.max(np.abs(c_plus - route)), np.max(np.abs(c_minus - (np.eye(2 * n) - route)))))
    return CovariancePair(c_plus, c_minus, 0.0, "vacuum", block_density(d),
                          {"route_defect": defect, "closed_form_plus": route})


def fit_power_law(t: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of ``log values`` against ``log <t>``."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = v > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(np.sqrt(1 + t[ok] ** 2)), np.log(v[ok]), 1)[0])


@dataclass(eq=False)
class ScatteringLimit:
    pair: CovariancePair
    horizons: list
    differences: list
    rate: float
    converged: bool
    history: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {"horizons": self.horizons, "differences": self.differences, "rate": self.rate,
                "converged": self.converged}


def scattering_covariances(
    direction: str,
    generator,
    vacuum: CovariancePair,
    horizons=None,
    first: float = 5.0,
    ratio: float = 2.0,
    tol: float = 1e-6,
    grid: SpatialGrid | None = None,
    table: np.ndarray | None = None,
) -> ScatteringLimit:
    """``c+-_{out/in}(0) = lim U(0, t) c+-_vac U(t, 0)`` along a geometric horizon schedule.

    ``generator`` is the Cauchy generator family. ``horizons`` (positive) may be
    given explicitly; otherwise ``first * ratio^j`` up to the grid edge. The
    rate is the fitted exponent of successive differences against the horizon.
    Differences are measured with charge balancing when a grid is given.
    ``table`` may supply precomputed ``U(t, 0)`` for the signed horizons.
    """
    if direction not in ("out", "in"):
        raise ValueError("direction must be 'out' or 'in'")
    sign = 1.0 if direction == "out" else -1.0
    grid_t = getattr(generator, "times", None)
    edge = math.inf if grid_t is None else (grid_t.stop if sign > 0 else -grid_t.start)
    if horizons is None:
        if math.isinf(edge):
            raise ValueError("a generator without a time grid needs explicit horizons")
        horizons = []
        h = first
        while h <= edge * (1 + 1e-12):
            horizons.append(h)
            h *= ratio
    horizons = [float(h) for h in horizons]
    if not horizons or max(horizons) > edge * (1 + 1e-12):
        raise ValueError(f"horizons must lie within the generator's grid (|t| <= {edge})")
    Us = propagator_table(generator, [sign * h for h in horizons], 0.0) if table is None else table
    n = vacuum.n
    E, Ei = _balance(grid, n)
    iterates = []
    for U in Us:
        Ui = np.linalg.inv(U)
        iterates.append((Ui @ vacuum.c_plus @ U, Ui @ vacuum.c_minus @ U))
    diffs = []
    for (p0, _), (p1, _) in zip(iterates[:-1], iterates[1:]):
        diffs.append(float(np.linalg.norm(Ei @ (p1 - p0) @ E, 2)))
    converged = bool(diffs and diffs[-1] < tol)
    rate = fit_power_law(np.array(horizons[:-1]), np.array(diffs)) if len(diffs) >= 2 else float("nan")
    d0 = block_density(generator.density_at(0.0))
    cp, cm = iterates[-1]
    pair = CovariancePair(cp, cm, 0.0, direction, d0, {"horizon": horizons[-1]})
    return ScatteringLimit(pair, horizons, diffs, rate, converged, history=iterates)


@dataclass(eq=False)
class TwoPointKernel:
    """Field-compressed kernel blocks ``blocks[i, j] = K(t_list[i], s_list[j])`` (``N x N``)."""

    t_list: np.ndarray
    s_list: np.ndarray
    blocks: np.ndarray = field(repr=False)
    sign: str = "+"
    provenance: str = "ref"

    def at(self, i: int, j: int) -> np.ndarray:
        return self.blocks[i, j]


def _field_rows(Ut: np.ndarray, c: np.ndarray | None, n: int) -> np.ndarray:
    """``pi0 U(t, 0) c`` for a stack of ``U``."""
    top = Ut[:, :n, :]
    return top if c is None else top @ c


def _source_cols(Us: np.ndarray, n: int) -> np.ndarray:
    """``U(s, 0)^{-1} pi1^*`` for a stack of ``U``."""
    return np.linalg.inv(Us)[:, :, n:]


def two_point_kernel(pair: CovariancePair, generator, t_list, s_list, sign: str = "+",
                     U_t: np.ndarray | None = None, U_s: np.ndarray | None = None) -> TwoPointKernel:
    """``Lambda+-(t, s) = +- pi0 U(t, 0) c+- U(0, s) pi1^*`` on the sample grid (pair lives at time 0)."""
    if abs(pair.reference_time) > 1e-12:
        raise ValueError("two_point_kernel expects covariances at time 0")
    t_list = np.asarray(t_list, dtype=float)
    s_list = np.asarray(s_list, dtype=float)
    n = pair.n
    if U_t is None:
        U_t = propagator_table(generator, t_list)
    if U_s is None:
        U_s = propagator_table(generator, s_list)
    c = pair.c_plus if sign == "+" else pair.c_minus
    sg = 1.0 if sign == "+" else -1.0
    L = _field_rows(U_t, c, n)
    R = _source_cols(U_s, n)
    blocks = sg * (L[:, None] @ R[None])
    return TwoPointKernel(t_list, s_list, blocks, sign, pair.provenance)


def causal_kernel(generator, t_list, s_list, U_t=None, U_s=None) -> TwoPointKernel:
    """``G(t, s) = -i pi0 U(t, s) pi1^*``."""
    t_list = np.asarray(t_list, dtype=float)
    s_list = np.asarray(s_list, dtype=float)
    if U_t is None:
        U_t = propagator_table(generator, t_list)
    if U_s is None:
        U_s = propagator_table(generator, s_list)
    n = U_t.shape[1] // 2
    blocks = -1j * (_field_rows(U_t, None, n)[:, None] @ _source_cols(U_s, n)[None])
    return TwoPointKernel(t_list, s_list, blocks, "G", "causal")


def kernel_equation_residual(kernel: TwoPointKernel, model, fd_order: int = 10, column: int | None = None,
                             exclude: np.ndarray | None = None) -> float:
    """Relative residual of ``(d_t^2 + r d_t + a) K(., s)`` over interior stencil points.

    ``t_list`` must be uniform. The residual is normalized by the largest
    ``|a K|`` entry. ``exclude`` masks ``(t, s)`` pairs (e.g. the diagonal of a
    Green function).
    """
    t = kernel.t_list
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise ValueError("kernel_equation_residual needs a uniform t_list")
    K = kernel.blocks if column is None else kernel.blocks[:, [column]]
    a = np.array([interpolate(model.a.data, model.times, float(x)) for x in t])
    r = np.array([interpolate(model.r_diag, model.times, float(x)) for x in t])
    d1 = apply_time_derivative(K, dt, fd_order, 1)
    d2 = apply_time_derivative(K, dt, fd_order, 2)
    aK = a[:, None] @ K
    res = d2 + r[:, None, :, None] * d1 + aK
    half = fd_order // 2 + 1
    inner = slice(half, t.size - half)
    res_in = np.abs(res[inner])
    if exclude is not None:
        ex = exclude if column is None else exclude[:, [column]]
        res_in = np.where(ex[inner][:, :, None, None], 0.0, res_in)
    return float(res_in.max() / max(np.abs(aK).max(), 1e-300))


def hadamard_frequency_proxy(kernel: TwoPointKernel, grid: SpatialGrid, s_index: int = 0,
                             min_oscillations: float = 8.0, resolved_factor: float = 4.0,
                             frequencies: np.ndarray | None = None) -> dict:
    """Hann-tapered spectral energy of ``t -> K(t, s0)`` per Fourier mode.

    A mode's time series is the row of ``F K(t, s0) F^*`` for that wavenumber;
    ``frequencies`` (angular, one per mode) decide which modes are resolved,
    i.e. ``w >= resolved_factor * 2 pi / T_window``. The positive half-line is
    the one carrying ``exp(+i w t)``, calibrated on the static mode.
    """
    t = kernel.t_list
    T = t[-1] - t[0]
    dt = t[1] - t[0]
    if frequencies is None:
        frequencies = np.sqrt(1.0 + grid.wavenumbers**2)
    slowest = float(np.min(frequencies))
    need = min_oscillations * 2 * math.pi / slowest
    if T < need:
        raise ValueError(f"kernel window {T:.4g} too short; need at least {need:.4g} for {min_oscillations} "
                         f"oscillations of the slowest mode")
    nyq = math.pi / dt
    if np.max(frequencies) >= nyq:
        raise ValueError(f"time step {dt:.4g} does not resolve frequency {np.max(frequencies):.4g}")
    F = grid.fourier_matrix()
    series = F @ kernel.blocks[:, s_index] @ F.conj().T
    win = np.hanning(t.size)
    spec = np.fft.fft(win[:, None, None] * series, axis=0)
    freq = np.fft.fftfreq(t.size, d=dt)
    energy = np.abs(spec) ** 2
    pos = energy[freq > 0].sum(axis=0)
    neg = energy[freq < 0].sum(axis=0)
    mode_pos = pos.sum(axis=1)
    mode_tot = (pos + neg).sum(axis=1) + energy[freq == 0].sum(axis=0).sum(axis=1)
    chosen = neg.sum(axis=1) if kernel.sign == "-" else mode_pos
    frac = chosen / np.maximum(mode_tot, 1e-300)
    resolved = frequencies >= resolved_factor * 2 * math.pi / T
    return {
        "positive_fraction": frac,
        "resolved": resolved,
        "min_resolved_fraction": float(np.min(frac[resolved])) if np.any(resolved) else float("nan"),
        "window": float(T),
        "convention": "exp(+i w t) is positive frequency",
    }
