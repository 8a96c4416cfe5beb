"""Retarded, advanced and Feynman propagators with their residual checks.

Scalar kernels act on field sources and are compressed to the field
component:

    G+(t, s) = -i pi0 U(t, s) pi1^* theta(t - s),
    G-(t, s) = +i pi0 U(t, s) pi1^* theta(s - t),

so ``G+ - G- = G``. In the ad frame

    G_ad+(t, s) = i U_ad(t, s) theta(t - s),   G_ad-(t, s) = -i U_ad(t, s) theta(s - t).

The Feynman parametrix is built from the auxiliary evolution ``U_d`` of the
block-diagonal part ``H_d``:

    G_ad_F(t, s) = i theta(t - s) U_d(t, 0) pi+ U_d(0, s) - i theta(s - t) U_d(t, 0) pi- U_d(0, s),
    G_F = -pi0 T G_ad_F T^{-1} pi1^*.

On the diagonal ``t = s`` the step function takes the value 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import SmoothingGauge, SpatialGrid, smoothing_gauge
from .evolution import propagator_table, symplectic_form
from .families import block_density
from .states import TwoPointKernel, hadamard_frequency_proxy
from .timegrid import apply_time_derivative, fd_weights, interpolate

__all__ = [
    "KernelOperator",
    "ConventionError",
    "scalar_kernels",
    "block_kernels",
    "retarded_advanced",
    "apply_wave_operator",
    "apply_block_operator",
    "jump_defect",
    "feynman_block",
    "feynman_scalar",
    "feynman_residual",
    "feynman_positivity",
    "feynman_vs_state",
    "feynman_frequency_proxy",
    "band_limited_impulse",
    "cumulative_simpson_uniform",
]


class ConventionError(ValueError):
    """No candidate combination of two-point function and propagator inverts ``P``."""


@dataclass(eq=False)
class KernelOperator:
    """Kernel blocks ``blocks[i, j] = K(t_list[i], s_list[j])``."""

    kind: str
    level: str
    t_list: np.ndarray
    s_list: np.ndarray
    blocks: np.ndarray = field(repr=False)
    quadrature: str = "pointwise"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("retarded", "advanced", "feynman", "causal", "reference"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.level not in ("block", "scalar"):
            raise ValueError("level must be 'block' or 'scalar'")

    def at(self, i: int, j: int) -> np.ndarray:
        return self.blocks[i, j]

    def __sub__(self, other: "KernelOperator") -> "KernelOperator":
        return KernelOperator("causal", self.level, self.t_list, self.s_list, self.blocks - other.blocks,
                              self.quadrature)

    def as_two_point(self, sign: str = "+") -> TwoPointKernel:
        return TwoPointKernel(self.t_list, self.s_list, self.blocks, sign, self.kind)


def _step(t_list: np.ndarray, s_list: np.ndarray) -> np.ndarray:
    d = t_list[:, None] - s_list[None, :]
    return np.where(d > 0, 1.0, np.where(d < 0, 0.0, 0.5))


def _tables(generator, t_list, s_list, U_t, U_s):
    if U_t is None:
        U_t = propagator_table(generator, t_list)
    if U_s is None:
        U_s = propagator_table(generator, s_list)
    return U_t, U_s


def scalar_kernels(generator, t_list, s_list, U_t=None, U_s=None) -> dict:
    """Retarded, advanced and causal scalar kernels from Cauchy-frame propagator tables."""
    t_list = np.asarray(t_list, dtype=float)
    s_list = np.asarray(s_list, dtype=float)
    U_t, U_s = _tables(generator, t_list, s_list, U_t, U_s)
    n = U_t.shape[1] // 2
    G = -1j * (U_t[:, None, :n, :] @ np.linalg.inv(U_s)[None, :, :, n:])
    th = _step(t_list, s_list)[:, :, None, None]
    return {
        "retarded": KernelOperator("retarded", "scalar", t_list, s_list, th * G),
        "advanced": KernelOperator("advanced", "scalar", t_list, s_list, -(1.0 - th) * G),
        "causal": KernelOperator("causal", "scalar", t_list, s_list, G),
    }


def block_kernels(generator, t_list, s_list, U_t=None, U_s=None) -> dict:
    """Retarded and advanced ad-frame kernels ``+-i U_ad(t, s) theta(+-(t - s))``."""
    t_list = np.asarray(t_list, dtype=float)
    s_list = np.asarray(s_list, dtype=float)
    U_t, U_s = _tables(generator, t_list, s_list, U_t, U_s)
    U = U_t[:, None] @ np.linalg.inv(U_s)[None]
    th = _step(t_list, s_list)[:, :, None, None]
    return {
        "retarded": KernelOperator("retarded", "block", t_list, s_list, 1j * th * U),
        "advanced": KernelOperator("advanced", "block", t_list, s_list, -1j * (1.0 - th) * U),
    }


def band_limited_impulse(times: np.ndarray, s0: float, profile: np.ndarray, width: float | None = None) -> np.ndarray:
    """Discrete delta at ``s0`` divided by the step, smoothed over ``width`` (a Gaussian of unit mass)."""
    times = np.asarray(times, dtype=float)
    dt = times[1] - times[0]
    if width is None:
        j = int(np.argmin(np.abs(times - s0)))
        w = np.zeros(times.size)
        w[j] = 1.0 / dt
    else:
        w = np.exp(-0.5 * ((times - s0) / width) ** 2) / (width * math.sqrt(2 * math.pi))
    return w[:, None] * np.asarray(profile)[None, :]


def cumulative_simpson_uniform(y: np.ndarray, dt: float, width: int = 8) -> np.ndarray:
    """Running integral along axis 0, Simpson's rule on every step.

    Each step's midpoint value comes from a ``width``-point Lagrange stencil,
    so every node gets the same rule and the quadrature error varies smoothly
    from node to node (alternating composite rules would not survive the
    finite differences applied afterwards).
    """
    y = np.asarray(y)
    nt = y.shape[0]
    if nt < width:
        raise ValueError(f"need at least {width} samples")
    mids = np.empty((nt - 1,) + y.shape[1:], dtype=np.result_type(y, float))
    half = width // 2
    for j in range(nt - 1):
        lo = min(max(j - half + 1, 0), nt - width)
        w = fd_weights(np.arange(lo, lo + width, dtype=float), j + 0.5, 0)
        mids[j] = np.tensordot(w, y[lo:lo + width], axes=(0, 0))
    steps = dt / 6.0 * (y[:-1] + 4.0 * mids + y[1:])
    out = np.zeros_like(mids, shape=y.shape)
    out[1:] = np.cumsum(steps, axis=0)
    return out


def retarded_advanced(kind: str, level: str, generator, f: np.ndarray, times, U_table: np.ndarray | None = None,
                      support_tol: float = 1e-12) -> np.ndarray:
    """``G+- f`` on the sample times by composite Simpson quadrature of the defining integral.

    ``f`` has shape ``(nt, N)`` for ``level='scalar'`` and ``(nt, 2N)`` for
    ``level='block'``. ``U_table`` holds ``U(t, 0)`` on ``times``.
    """
    if kind not in ("retarded", "advanced"):
        raise ValueError("kind must be 'retarded' or 'advanced'")
    times = np.asarray(times, dtype=float)
    f = np.asarray(f, dtype=complex)
    if f.shape[0] != times.size:
        raise ValueError("source must be sampled on the given times")
    scale = max(np.abs(f).max(), 1e-300)
    edge = f[0] if kind == "retarded" else f[-1]
    if np.abs(edge).max() > support_tol * scale:
        raise ValueError(f"source support overflows the time grid ({kind} integral needs f = 0 at the "
                         f"{'start' if kind == 'retarded' else 'end'})")
    U = propagator_table(generator, times) if U_table is None else U_table
    Ui = np.linalg.inv(U)
    if level == "scalar":
        n = f.shape[1]
        integrand = np.einsum("tij,tj->ti", Ui[:, :, n:], f)
    elif level == "block":
        n = f.shape[1] // 2
        integrand = np.einsum("tij,tj->ti", Ui, f)
    else:
        raise ValueError("level must be 'block' or 'scalar'")
    cum = cumulative_simpson_uniform(integrand, times[1] - times[0])
    if kind == "advanced":
        cum = cum - cum[-1]
    v = np.einsum("tij,tj->ti", U, cum)
    if level == "scalar":
        return -1j * v[:, :n]
    return 1j * v


def _slices(family_data, family_times, times):
    return np.array([interpolate(family_data, family_times, float(x)) for x in times])


def apply_wave_operator(model, u: np.ndarray, times, fd_order: int = 10) -> np.ndarray:
    """``(d_t^2 + r d_t + a) u`` on a uniform grid.

    ``u`` is a sampled solution of shape ``(nt, N)`` or a kernel of shape
    ``(nt, ns, N, M)`` differentiated in its first argument.
    """
    times = np.asarray(times, dtype=float)
    if u.ndim not in (2, 4):
        raise ValueError("u must be (nt, N) samples or an (nt, ns, N, M) kernel")
    dt = times[1] - times[0]
    r = _slices(model.r_diag, model.times, times)
    out = apply_time_derivative(u, dt, fd_order, 2)
    d1 = apply_time_derivative(u, dt, fd_order, 1)
    if u.ndim == 2:
        out += r * d1
    else:
        out += r[:, None, :, None] * d1
    del d1
    for j, x in enumerate(times):
        a = interpolate(model.a.data, model.times, float(x))
        out[j] += u[j] @ a.T if u.ndim == 2 else a @ u[j]
    return out


def apply_block_operator(generator, u: np.ndarray, times, fd_order: int = 10) -> np.ndarray:
    """``(i^{-1} d_t - H(t)) u`` for samples ``(nt, 2N)`` or kernels ``(nt, ns, 2N, M)``."""
    times = np.asarray(times, dtype=float)
    dt = times[1] - times[0]
    out = -1j * apply_time_derivative(u, dt, fd_order, 1)
    for j, x in enumerate(times):
        H = generator.at(float(x))
        out[j] -= u[j] @ H.T if u.ndim == 2 else H @ u[j]
    return out


def jump_defect(kernel: KernelOperator, target: np.ndarray, derivative: int = 1, width: int = 9,
                continuous: bool | None = None) -> float:
    """``max | jump - target |`` of the ``t``-derivative across every diagonal point ``t = s``.

    One-sided stencils of ``width`` nodes on each side. Scalar kernels are
    continuous across the diagonal, so their stencils include the diagonal
    node; block kernels jump there and are extrapolated from strictly one side.
    """
    if continuous is None:
        continuous = kernel.level == "scalar"
    t = kernel.t_list
    dt = t[1] - t[0]
    first = 0 if continuous else 1
    right_nodes = np.arange(first, first + width, dtype=float)
    wr = fd_weights(right_nodes, 0.0, derivative) / dt**derivative
    wl = fd_weights(-right_nodes, 0.0, derivative) / dt**derivative
    worst = 0.0
    found = False
    for j, s in enumerate(kernel.s_list):
        i = int(np.argmin(np.abs(t - s)))
        if abs(t[i] - s) > 1e-9 * max(1.0, abs(s)) or i < width + 1 or i + width + 1 >= t.size:
            continue
        found = True
        right = np.tensordot(wr, kernel.blocks[i + first:i + first + width, j], axes=(0, 0))
        left = np.tensordot(wl, kernel.blocks[i - first::-1][:width, j], axes=(0, 0))
        worst = max(worst, float(np.abs(right - left - target).max()))
    if not found:
        raise ValueError("no interior diagonal point t = s on the sample grid")
    return worst


def _ud_tables(pack, t_list, s_list, Ud_t, Ud_s):
    return _tables(pack.H_d, t_list, s_list, Ud_t, Ud_s)


def feynman_block(pack, t_list, s_list, Ud_t: np.ndarray | None = None, Ud_s: np.ndarray | None = None,
                  boundary_times: tuple[float, float] | None = None,
                  U_boundary: np.ndarray | None = None) -> KernelOperator:
    """``G_ad_F`` from the auxiliary diagonal evolution with its exactness report in ``meta``.

    ``meta`` records the diagonal jump defect (against ``i``), the Hermitian
    part identity defect (square grids only) and the scattering-data
    annihilation ``pi- U_d(0, T) G_ad_F(T, s)``, ``pi+ U_d(0, -T) G_ad_F(-T, s)``
    at ``boundary_times = (-T, T)``; ``U_boundary`` may supply ``U_d(T, 0)``, ``U_d(-T, 0)``.
    """
    t_list = np.asarray(t_list, dtype=float)
    s_list = np.asarray(s_list, dtype=float)
    Ud_t, Ud_s = _ud_tables(pack, t_list, s_list, Ud_t, Ud_s)
    nb = Ud_t.shape[1]
    n = nb // 2
    pp = np.diag(np.r_[np.ones(n), np.zeros(n)])
    pm = np.eye(nb) - pp
    Uinv_s = np.linalg.inv(Ud_s)
    th = _step(t_list, s_list)[:, :, None, None]
    plus = Ud_t[:, None, :, :n] @ Uinv_s[None, :, :n, :]
    minus = Ud_t[:, None, :, n:] @ Uinv_s[None, :, n:, :]
    blocks = 1j * th * plus - 1j * (1.0 - th) * minus
    meta = {}
    # jump across the diagonal from the two branch formulas
    jumps = []
    for j, s in enumerate(s_list):
        i = np.flatnonzero(np.abs(t_list - s) <= 1e-12 * max(1.0, abs(s)))
        if i.size:
            jumps.append(np.abs(1j * plus[i[0], j] + 1j * minus[i[0], j] - 1j * np.eye(nb)).max())
    meta["jump_defect"] = float(max(jumps)) if jumps else float("nan")
    if t_list.size == s_list.size and np.allclose(t_list, s_list):
        dens = np.array([block_density(pack.H_d.density_at(float(x))) for x in t_list])
        adj = np.conj(np.swapaxes(blocks, 0, 1)).swapaxes(2, 3)
        adj = adj * dens[None, :, None, :] / dens[:, None, :, None]
        lhs = -1j * (blocks - adj)
        q = symplectic_form(n, "ad")
        rhs = plus - minus
        meta["hermitian_identity_defect"] = float(np.abs(lhs - rhs).max() / max(np.abs(rhs).max(), 1e-300))
    if boundary_times is not None:
        lo, hi = boundary_times
        U_hi, U_lo = propagator_table(pack.H_d, [hi, lo]) if U_boundary is None else U_boundary
        g_hi = 1j * (U_hi @ pp) @ Uinv_s
        g_lo = -1j * (U_lo @ pm) @ Uinv_s
        out_def = (pm @ np.linalg.inv(U_hi)) @ g_hi
        in_def = (pp @ np.linalg.inv(U_lo)) @ g_lo
        scale = max(np.abs(g_hi).max(), np.abs(g_lo).max(), 1e-300)
        meta["boundary_out_defect"] = float(np.abs(out_def).max() / scale)
        meta["boundary_in_defect"] = float(np.abs(in_def).max() / scale)
        meta["boundary_times"] = (float(lo), float(hi))
    return KernelOperator("feynman", "block", t_list, s_list, blocks, "pointwise", meta)


def feynman_scalar(pack, block: KernelOperator) -> KernelOperator:
    """``G_F(t, s) = -pi0 T(t) G_ad_F(t, s) T(s)^{-1} pi1^*``."""
    T = np.array([pack.T_at(float(x)) for x in block.t_list])
    Ti = np.array([pack.T_inv_at(float(x)) for x in block.s_list])
    n = T.shape[1] // 2
    blocks = -(T[:, None, :n, :] @ block.blocks) @ Ti[None, :, :, n:]
    return KernelOperator("feynman", "scalar", block.t_list, block.s_list, blocks, block.quadrature,
                          dict(block.meta))


def _near_diagonal(t_list, s_list, half_width: float) -> np.ndarray:
    return np.abs(t_list[:, None] - s_list[None, :]) <= half_width


def feynman_residual(kernel: KernelOperator, model, grid: SpatialGrid, fd_order: int = 10, k_band: float | None = None,
                     orders=(0, 1, 2, 3)) -> dict:
    """``P G_F - 1`` away from the diagonal: relative size, Fourier tail and smoothing gauge.

    The delta on the diagonal is checked separately by ``jump_defect``; here
    points within one stencil half-width of ``t = s`` and the grid ends are
    dropped. The tail is the largest Fourier coefficient with either
    wavenumber beyond ``k_band`` (default half the grid maximum), relative to
    the largest ``|a G_F|`` coefficient.
    """
    t = kernel.t_list
    dt = t[1] - t[0]
    R = apply_wave_operator(model, kernel.blocks, t, fd_order)
    aK = _slices(model.a.data, model.times, t)[:, None] @ kernel.blocks
    half = fd_order // 2 + 1
    keep = ~_near_diagonal(t, kernel.s_list, (half + 0.5) * dt)
    keep[:half] = False
    keep[t.size - half:] = False
    if not np.any(keep):
        raise ValueError("no sample away from the diagonal and the grid ends")
    F = grid.fourier_matrix()
    Rk = F @ R @ F.conj().T
    scale = max(float(np.abs(aK[keep]).max()), 1e-300)
    if k_band is None:
        k_band = np.max(np.abs(grid.wavenumbers)) / 2
    outside = np.abs(grid.wavenumbers) > k_band
    mask = outside[:, None] | outside[None, :]
    tail = float(np.abs(Rk[keep][:, mask]).max()) / scale
    worst = np.unravel_index(np.argmax(np.where(keep, np.abs(R).max(axis=(2, 3)), -1.0)), keep.shape)
    gauge = smoothing_gauge(R[worst], orders, grid)
    return {
        "relative_residual": float(np.abs(R[keep]).max()) / scale,
        "fourier_tail": tail,
        "k_band": float(k_band),
        "gauge": gauge,
        "worst_pair": (float(t[worst[0]]), float(kernel.s_list[worst[1]])),
    }


def feynman_positivity(kernel: KernelOperator, density: np.ndarray | None = None) -> dict:
    """Spectrum of the sampled form ``i (G_F(t, s) - G_F(s, t)^*)`` on a square grid.

    This is the sign for which the static mode gives ``cos(w (t - s)) / w``,
    a positive kernel; ``i^{-1}`` in front would make it negative.
    """
    if kernel.t_list.size != kernel.s_list.size or not np.allclose(kernel.t_list, kernel.s_list):
        raise ValueError("positivity needs a square kernel with t_list == s_list")
    K = kernel.blocks
    nt, _, n, _ = K.shape
    adj = np.conj(np.swapaxes(K, 0, 1)).swapaxes(2, 3)
    Q = 1j * (K - adj)
    w = np.ones(n) if density is None else np.sqrt(np.asarray(density))
    Q = w[None, None, :, None] * Q * w[None, None, None, :]
    M = Q.transpose(0, 2, 1, 3).reshape(nt * n, nt * n)
    M = 0.5 * (M + M.conj().T)
    ev = np.linalg.eigvalsh(M)
    return {"min_eig": float(ev[0]), "max_eig": float(ev[-1]),
            "relative_min": float(ev[0] / max(abs(ev[-1]), 1e-300))}


def feynman_vs_state(G_F: KernelOperator, lam_plus: KernelOperator, retarded: KernelOperator,
                     advanced: KernelOperator, model, grid: SpatialGrid, fd_order: int = 10, tol: float = 1e-6,
                     orders=(0, 1, 2, 3), pairs=None) -> dict:
    """Pick the combination ``c Lambda+ + g G+-`` that inverts ``P`` and is closest to ``G_F``.

    Candidates use ``c`` in ``{i, i^{-1}}``, ``g`` in ``{+1, -1}`` and either
    propagator. A candidate inverts ``P`` when its off-diagonal residual and
    its derivative jump defect (against the identity) are below ``tol``.
    The gauge of ``G_F`` minus the chosen reference is returned per order,
    maximized over ``pairs`` (index pairs with ``t != s``).
    """
    for k in (lam_plus, retarded, advanced):
        if k.blocks.shape != G_F.blocks.shape:
            raise ValueError("all kernels must share the (t, s) sample grid")
    n = G_F.blocks.shape[-1]
    eye = np.eye(n)
    t = G_F.t_list
    half = fd_order // 2 + 1
    dt = t[1] - t[0]
    keep = ~_near_diagonal(t, G_F.s_list, (half + 0.5) * dt)
    keep[:half] = False
    keep[t.size - half:] = False
    a = _slices(model.a.data, model.times, t)[:, None]
    # P is linear: apply it once per ingredient and combine
    P_lam = apply_wave_operator(model, lam_plus.blocks, t, fd_order)[keep]
    P_prop = {"G+": apply_wave_operator(model, retarded.blocks, t, fd_order)[keep],
              "G-": apply_wave_operator(model, advanced.blocks, t, fd_order)[keep]}
    aL = (a @ lam_plus.blocks)[keep]
    aG = {"G+": (a @ retarded.blocks)[keep], "G-": (a @ advanced.blocks)[keep]}
    gf_scale = max(np.abs(G_F.blocks).max(), 1e-300)
    candidates = {}
    for cname, c in (("i", 1j), ("i^-1", -1j)):
        for gname, g in (("+", 1.0), ("-", -1.0)):
            for pname, Gp in (("G+", retarded), ("G-", advanced)):
                label = f"{cname} Lambda+ {gname} {pname}"
                aK = np.abs(c * aL + g * aG[pname]).max()
                off = float(np.abs(c * P_lam + g * P_prop[pname]).max() / max(aK, 1e-300))
                K = KernelOperator("reference", "scalar", t, G_F.s_list, c * lam_plus.blocks + g * Gp.blocks)
                jump = jump_defect(K, eye)
                dist = float(np.abs(K.blocks - G_F.blocks)[keep].max() / gf_scale)
                candidates[label] = {"coefficients": (c, g, Gp), "p_residual": max(off, jump), "distance": dist}
                del K
    passing = {k: v for k, v in candidates.items() if v["p_residual"] <= tol}
    if not passing:
        best = min(v["p_residual"] for v in candidates.values())
        raise ConventionError(f"no sign convention inverts P (best residual {best:.3g} > {tol:.3g})")
    chosen = min(passing, key=lambda k: passing[k]["distance"])
    c, g, Gp = passing[chosen]["coefficients"]
    diff = G_F.blocks - (c * lam_plus.blocks + g * Gp.blocks)
    if pairs is None:
        pairs = [tuple(ix) for ix in np.argwhere(keep)]
    gauges = [smoothing_gauge(diff[i, j], orders, grid) for i, j in pairs]
    agg = {m: max(g.values[m] for g in gauges) for m in orders}
    gauge = SmoothingGauge(tuple(orders), agg, None, gauges[0].weight_max)
    return {
        "chosen": chosen,
        "candidates": {k: {"p_residual": v["p_residual"], "distance": v["distance"]}
                       for k, v in candidates.items()},
        "gauge": gauge,
        "max_difference": float(np.abs(diff[keep]).max()),
    }


def feynman_frequency_proxy(G_F: KernelOperator, grid: SpatialGrid, side: str, s_index: int,
                            frequencies=None, min_oscillations: float = 8.0) -> dict:
    """Frequency proxy of ``t -> G_F(t, s)`` on one side of the diagonal.

    ``side='future'`` keeps ``t > s`` and expects positive frequencies;
    ``side='past'`` keeps ``t < s`` and expects negative ones.
    """
    s = G_F.s_list[s_index]
    sel = G_F.t_list > s if side == "future" else G_F.t_list < s
    if side not in ("future", "past"):
        raise ValueError("side must be 'future' or 'past'")
    tk = TwoPointKernel(G_F.t_list[sel], G_F.s_list[[s_index]], G_F.blocks[sel][:, [s_index]],
                        "+" if side == "future" else "-", "feynman")
    return hadamard_frequency_proxy(tk, grid, 0, min_oscillations=min_oscillations, frequencies=frequencies)
