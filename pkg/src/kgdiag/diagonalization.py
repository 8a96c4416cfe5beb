"""Square roots, the operator Riccati iteration and the diagonalizing transfer matrices.

Given the model data ``a(t)``, ``r(t)``, the iteration produces ``b(t)`` with
``b = eps + b_p`` (``eps = a^{1/2}``) solving

    i d_t b - b^2 + a + i r b = r_inf

up to a residual ``r_inf`` that shrinks with the iteration order on smooth data.
With ``b+ = b`` and ``b- = -b^*`` the pair ``T(t)``, ``T(t)^{-1}`` transforms the
Cauchy evolution into one generated by an almost-diagonal ``H_ad(t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .discretization import (
    spectral_norms,
    OperatorMatrix,
    SpatialGrid,
    SmoothingGauge,
    adjoint_array,
    hermitian_function,
    smoothing_gauge,
)
from .families import BlockOperatorFamily, OperatorFamily, assemble_blocks, block_density
from .geometry import ModelOperatorData
from .timegrid import apply_time_derivative

__all__ = [
    "sqrt_operator",
    "low_freq_cutoff",
    "CutoffResult",
    "riccati_solve",
    "RiccatiSolution",
    "build_pack",
    "DiagonalizationPack",
    "fractional_power_diff_check",
    "FractionalPowerReport",
    "factorization_defect",
    "static_transfer",
]


def _min_weighted_eig(A: np.ndarray, density: np.ndarray) -> np.ndarray:
    s = np.sqrt(density)
    Ah = A * s[..., :, None] / s[..., None, :]
    Ah = 0.5 * (Ah + np.conj(np.swapaxes(Ah, -1, -2)))
    return np.linalg.eigvalsh(Ah)[..., 0]


def sqrt_operator(a: OperatorMatrix) -> OperatorMatrix:
    """Positive square root in the operator's weighted product."""
    d = a.product.density
    lam_min = float(_min_weighted_eig(a.entries, d))
    if lam_min <= 0:
        raise ValueError(f"sqrt_operator needs a positive spectrum; smallest eigenvalue is {lam_min:.6g}")
    return OperatorMatrix(hermitian_function(a.entries, d, np.sqrt), a.product)


@dataclass(eq=False)
class CutoffResult:
    family: OperatorFamily
    modified_slices: np.ndarray = field(repr=False)
    gauges: dict = field(default_factory=dict, repr=False)


def low_freq_cutoff(
    a_family: OperatorFamily,
    c0: float,
    grid: SpatialGrid | None = None,
    orders=(0, 1, 2, 3),
) -> CutoffResult:
    """Floor the spectrum of every slice at ``c0``.

    ``modified_slices`` flags the slices that changed; when a grid is supplied,
    ``gauges[j]`` is the smoothing gauge of the modification on slice ``j``.
    """
    d = a_family.density
    floored = hermitian_function(a_family.data, d, lambda lam: np.maximum(lam, c0))
    lam_min = _min_weighted_eig(a_family.data, d)
    changed = lam_min < c0
    out = np.where(changed[:, None, None], floored, a_family.data)
    gauges = {}
    if grid is not None:
        for j in np.flatnonzero(changed):
            gauges[int(j)] = smoothing_gauge(out[j] - a_family.data[j], orders, grid)
    fam = a_family.with_data(out, order=a_family.order, decay=a_family.decay)
    return CutoffResult(fam, changed, gauges)


@dataclass(eq=False)
class RiccatiSolution:
    """Output of :func:`riccati_solve`; families share the model's time grid and densities."""

    b_plus: OperatorFamily
    b_minus: OperatorFamily
    epsilon: OperatorFamily
    order: int
    residual_plus: OperatorFamily
    residual_minus: OperatorFamily
    gap_floor: float
    achieved_gap: float
    diverged: bool = False
    increments: list = field(default_factory=list)
    cutoff_active: bool = False
    fd_order: int = 8

    def residual_norms(self, which: str = "plus") -> np.ndarray:
        """Per-slice spectral norm of the residual (weighted product)."""
        fam = self.residual_plus if which == "plus" else self.residual_minus
        s = np.sqrt(fam.density)
        return spectral_norms(fam.data * s[:, :, None] / s[:, None, :])

    def residual_gauge(self, t: float, orders, grid: SpatialGrid, which: str = "plus") -> SmoothingGauge:
        fam = self.residual_plus if which == "plus" else self.residual_minus
        return smoothing_gauge(fam.slice(t), orders, grid)


def _riccati_map(x, eps, eps_inv, r, dt, fd_order):
    """``F(x) = 1/2 eps^{-1} (i d_t x + [eps, x] + i r x - x^2)``."""
    dx = apply_time_derivative(x, dt, fd_order)
    inner = 1j * dx + eps @ x - x @ eps + 1j * r[:, :, None] * x - x @ x
    return 0.5 * eps_inv @ inner


def riccati_residual(b, a, r, dt, fd_order=8):
    """``i d_t b - b^2 + a + i r b`` with the module's time stencil."""
    return 1j * apply_time_derivative(b, dt, fd_order) - b @ b + a + 1j * r[:, :, None] * b


def riccati_solve(
    model: ModelOperatorData,
    order: int = 3,
    gap_floor: float = 0.5,
    c0: float | None = None,
    fd_order: int = 8,
) -> RiccatiSolution:
    """Fixed-point iteration ``b_0 = a_0``, ``b_n = a_0 + F(b_{n-1})``; ``b = eps + b_p``.

    ``c0`` is the spectral floor applied to ``a(t)`` before taking square roots
    (default: a quarter of the scenario's mass floor). The residual is always
    measured against the unmodified ``a(t)``.
    """
    if order < 0:
        raise ValueError("Riccati order must be >= 0")
    if not 0 < gap_floor <= 1:
        raise ValueError("gap_floor must lie in (0, 1]")
    fam = model.a
    dens = fam.density
    dt = fam.times.dt
    r = model.r_diag
    if c0 is None:
        c0 = 0.25 * model.scenario.mass_floor
    cut = low_freq_cutoff(fam, c0)
    a_used = cut.family.data
    eps = hermitian_function(a_used, dens, np.sqrt)
    eps_inv = hermitian_function(a_used, dens, lambda lam: 1.0 / np.sqrt(lam))
    d_eps = apply_time_derivative(eps, dt, fd_order)
    a0 = 0.5j * eps_inv @ (d_eps + r[:, :, None] * eps)

    x = a0
    increments = []
    best, best_inc = x, np.inf
    diverged = False
    growth = 0
    for _ in range(order):
        new = a0 + _riccati_map(x, eps, eps_inv, r, dt, fd_order)
        inc = float(np.max(np.abs(new - x)))
        if increments and inc > increments[-1]:
            growth += 1
        else:
            growth = 0
        increments.append(inc)
        x = new
        if inc < best_inc:
            best, best_inc = x, inc
        if growth >= 2:
            diverged = True
            x = best
            break
    b = eps + x

    # gap regularization on the Hermitian part, keeping b- = -b^*
    s = b + adjoint_array(b, dens)
    eps_min = _min_weighted_eig(eps, dens)
    floor = gap_floor * 2 * eps_min
    s_min = _min_weighted_eig(s, dens)
    need = s_min < floor
    if np.any(need):
        s_reg = hermitian_function(s[need], dens[need], lambda lam: np.maximum(lam, floor[need][:, None]))
        b[need] = b[need] + 0.5 * (s_reg - s[need])
        s = b + adjoint_array(b, dens)
    achieved = float(np.min(_min_weighted_eig(s, dens) / (2 * eps_min)))

    b_minus = -adjoint_array(b, dens)
    res_p = riccati_residual(b, fam.data, r, dt, fd_order)
    res_m = riccati_residual(b_minus, fam.data, r, dt, fd_order)
    mk = lambda data, o: fam.with_data(data, order=o, decay=fam.decay)
    return RiccatiSolution(
        b_plus=mk(b, 1.0),
        b_minus=mk(b_minus, 1.0),
        epsilon=mk(eps, 1.0),
        order=order,
        residual_plus=mk(res_p, None),
        residual_minus=mk(res_m, None),
        gap_floor=gap_floor,
        achieved_gap=achieved,
        diverged=diverged,
        increments=increments,
        cutoff_active=bool(np.any(cut.modified_slices)),
        fd_order=fd_order,
    )


def factorization_defect(sol: RiccatiSolution, model: ModelOperatorData, phi: np.ndarray, sign: str = "plus") -> float:
    """Relative defect of ``(d_t + i b + r)(d_t - i b) phi = (d_t^2 + r d_t + a - r_inf) phi``.

    ``phi`` has shape ``(n_times, N)``; both sides use the module's stencils.
    The norm is the discrete ``H^2`` norm (spectral ``<D>^2`` weight) over all slices.
    """
    b = (sol.b_plus if sign == "plus" else sol.b_minus).data
    res = (sol.residual_plus if sign == "plus" else sol.residual_minus).data
    dt = model.times.dt
    o = sol.fd_order
    r = model.r_diag
    a = model.a.data
    D = lambda u: apply_time_derivative(u, dt, o)
    inner = D(phi) - 1j * np.einsum("tij,tj->ti", b, phi)
    lhs = D(inner) + 1j * np.einsum("tij,tj->ti", b, inner) + r * inner
    rhs = D(D(phi)) + r * D(phi) + np.einsum("tij,tj->ti", a, phi) - np.einsum("tij,tj->ti", res, phi)
    k = model.grid.wavenumbers
    w = 1.0 + k**2
    h2 = np.sqrt(np.sum(np.abs(np.fft.fft(phi, axis=1)) ** 2 * w**2) / phi.shape[1])
    return float(np.sqrt(np.sum(np.abs(lhs - rhs) ** 2)) / max(h2, 1e-300))


@dataclass(eq=False)
class DiagonalizationPack:
    """Transfer matrices, almost-diagonal generator and its diagonal part.

    Only the ingredients are stored; ``T``, ``T_inv`` and ``V_ad_minus_inf`` are
    assembled on access.
    """

    solution: RiccatiSolution = field(repr=False)
    model: ModelOperatorData = field(repr=False)
    M: np.ndarray = field(repr=False)
    M_inv: np.ndarray = field(repr=False)
    H_ad: BlockOperatorFamily = field(repr=False)
    H_d: BlockOperatorFamily = field(repr=False)
    r_b_plus: OperatorFamily = field(repr=False)
    r_b_minus: OperatorFamily = field(repr=False)

    @property
    def times(self):
        return self.H_ad.times

    @cached_property
    def T(self) -> BlockOperatorFamily:
        bp, bm = self.solution.b_plus.data, self.solution.b_minus.data
        M = self.M
        data = -1j * assemble_blocks(M, -M, bp @ M, -(bm @ M))
        return BlockOperatorFamily(self.times, data, self.model.a.density, "full", "cauchy", "T")

    @cached_property
    def T_inv(self) -> BlockOperatorFamily:
        bp, bm = self.solution.b_plus.data, self.solution.b_minus.data
        M = self.M
        data = 1j * assemble_blocks(-(M @ bm), M, -(M @ bp), M)
        return BlockOperatorFamily(self.times, data, self.model.a.density, "full", "ad", "T_inv")

    @cached_property
    def V_ad_minus_inf(self) -> BlockOperatorFamily:
        return BlockOperatorFamily(self.times, self.H_d.data - self.H_ad.data, self.H_ad.density,
                                   "full", "ad", "V_ad")

    def T_at(self, t: float) -> np.ndarray:
        """``T(t)`` at a node, or by Lagrange interpolation between nodes."""
        return self.T.at(t)

    def T_inv_at(self, t: float) -> np.ndarray:
        return self.T_inv.at(t)

    def V_ad_norms(self) -> np.ndarray:
        """Per-slice spectral norm of ``H_d - H_ad`` in the block weighted product."""
        s = np.sqrt(block_density(self.model.a.density))
        V = (self.H_d.data - self.H_ad.data) * s[:, :, None] / s[:, None, :]
        return spectral_norms(V)

    def invariant_report(self) -> dict:
        """Max over slices of ``|T T^{-1} - 1|``, ``|T^* q T - q_ad|`` and the ``H_d`` skew defect."""
        T, Ti = self.T.data, self.T_inv.data
        n2 = T.shape[1]
        n = n2 // 2
        eye = np.eye(n2)
        q = assemble_blocks(np.zeros((n, n)), np.eye(n), np.eye(n), np.zeros((n, n)))
        qad = np.diag(np.r_[np.ones(n), -np.ones(n)])
        dens = block_density(self.model.a.density)
        inv_def = q_def = hd_def = 0.0
        # slice by slice: the stacks are large at production sizes
        for j in range(T.shape[0]):
            inv_def = max(inv_def, np.max(np.abs(T[j] @ Ti[j] - eye)))
            Ts = adjoint_array(T[j], dens[j])
            q_def = max(q_def, np.max(np.abs(Ts @ q @ T[j] - qad)))
            Hd = self.H_d.data[j]
            skew = Hd - adjoint_array(Hd, dens[j])
            skew[np.arange(n2), np.arange(n2)] -= 1j * np.tile(self.model.r_diag[j], 2)
            hd_def = max(hd_def, np.max(np.abs(skew)))
        return {
            "T_Tinv_defect": float(inv_def),
            "symplectic_T_defect": float(q_def),
            "H_d_skew_minus_ir_defect": float(hd_def),
        }


def static_transfer(a: OperatorMatrix) -> tuple[np.ndarray, np.ndarray]:
    """``T`` and ``T^{-1}`` for a static operator with ``b+- = +-a^{1/2}``.

    With ``M = (2 a^{1/2})^{-1/2}``: ``T = -i [[M, -M], [eps M, eps M]]`` and
    ``T^{-1} = i [[M eps, M], [-M eps, M]]``.
    """
    d = a.product.density
    eps = hermitian_function(a.entries, d, np.sqrt)
    M = hermitian_function(a.entries, d, lambda lam: (2.0 * np.sqrt(lam)) ** -0.5)
    T = -1j * assemble_blocks(M, -M, eps @ M, eps @ M)
    Ti = 1j * assemble_blocks(M @ eps, M, -(M @ eps), M)
    return T, Ti


def build_pack(sol: RiccatiSolution, model: ModelOperatorData) -> DiagonalizationPack:
    """Assemble ``H_ad = T^{-1} H T + i T^{-1} d_t T`` in closed form.

    With ``M = (b+ - b-)^{-1/2}``, ``M^{-1} = (b+ - b-)^{1/2}`` and the Riccati
    residuals ``r+``, ``r-``::

        X+ = M^{-1} b+ M + i M^{-1} d_t M,    X- = M^{-1} b- M + i M^{-1} d_t M,
        H_ad = [[X+ + M r+ M, -M r- M],
                [M r+ M,      X- - M r- M]].

    ``H_d`` keeps ``X+``, ``X-`` with Hermitian part symmetrized and
    anti-Hermitian part ``i r / 2`` (the time derivative of the weight), so
    that ``U_d`` is unitary in the slice products.
    """
    dens = model.a.density
    dt = model.times.dt
    bp, bm = sol.b_plus.data, sol.b_minus.data
    beta = bp - bm
    M = hermitian_function(beta, dens, lambda lam: lam ** -0.5)
    Mi = hermitian_function(beta, dens, np.sqrt)
    K = 1j * Mi @ apply_time_derivative(M, dt, sol.fd_order)
    rp, rm = sol.residual_plus.data, sol.residual_minus.data
    X_plus = Mi @ bp @ M + K
    X_minus = Mi @ bm @ M + K
    Rp = M @ rp @ M
    Rm = M @ rm @ M
    H_ad = assemble_blocks(X_plus + Rp, -Rm, Rp, X_minus - Rm)
    ir = 1j * model.r_diag[:, :, None] * np.eye(model.grid.n_points)

    def diag_part(X):
        return 0.5 * (X + adjoint_array(X, dens)) + 0.5 * ir

    zero = np.zeros_like(X_plus)
    H_d = assemble_blocks(diag_part(X_plus), zero, zero, diag_part(X_minus))
    times = model.times
    fam_ad = BlockOperatorFamily(times, H_ad, dens, "full", "ad", "H_ad")
    fam_d = BlockOperatorFamily(times, H_d, dens, "diagonal", "ad", "H_d")
    # H_ad diagonal blocks read -b-/+ + r_b-/+
    r_b_minus = model.a.with_data(X_plus + bm, order=0.0, decay=model.a.decay)
    r_b_plus = model.a.with_data(X_minus + bp, order=0.0, decay=model.a.decay)
    return DiagonalizationPack(sol, model, M, Mi, fam_ad, fam_d, r_b_plus, r_b_minus)


@dataclass
class FractionalPowerReport:
    alpha: float
    weight_order: float
    values: np.ndarray = field(repr=False)
    sup: float = 0.0
    bounded: bool = True
    peak_time: float = 0.0
    gauge: SmoothingGauge | None = None


def fractional_power_diff_check(
    a1: OperatorFamily,
    a2: OperatorFamily,
    alpha: float,
    k: float,
    grid: SpatialGrid,
    delta: float = 0.0,
    orders=(0, 1, 2),
    growth_factor: float = 2.0,
) -> FractionalPowerReport:
    """Scan ``<t>^delta ||<D>^{-(2(alpha-1)+k)} (a1^alpha - a2^alpha)||`` over the time grid.

    ``k`` is the order of ``a1 - a2``. ``bounded`` is false when the late-time
    maximum exceeds ``growth_factor`` times the overall maximum of the first
    half of the scan. ``gauge`` is the smoothing gauge of the unweighted
    difference at the peak time.
    """
    d1, d2 = a1.density, a2.density
    p1 = hermitian_function(a1.data, d1, lambda lam: np.maximum(lam, 0) ** alpha)
    p2 = hermitian_function(a2.data, d2, lambda lam: np.maximum(lam, 0) ** alpha)
    diff = p1 - p2
    worder = 2 * (alpha - 1) + k
    F = grid.fourier_matrix()
    w = (1.0 + grid.wavenumbers**2) ** (-worder / 2)
    dk = F @ diff @ F.conj().T
    norms = np.linalg.norm(w[None, :, None] * dk, ord=2, axis=(1, 2))
    t = a1.times.values
    vals = (1 + t**2) ** (delta / 2) * norms
    j = int(np.argmax(vals))
    half = max(1, vals.size // 2)
    early = float(np.max(np.abs(vals[:half])))
    late = float(np.max(np.abs(vals[half:]))) if vals.size > 1 else early
    bounded = bool(np.all(np.isfinite(vals)) and late <= growth_factor * max(early, 1e-300) + 1e-300)
    gauge = smoothing_gauge(diff[j], orders, grid)
    return FractionalPowerReport(alpha, worder, vals, float(vals[j]), bounded, float(t[j]), gauge)
