"""Time-ordered propagation ``d_t U = i H(t) U`` and the associated checks.

Time-dependent generators are integrated with the fourth-order
commutator-free Magnus scheme on Gauss nodes,

    U(t + h, t) = exp(i (B0/2 + 2 B1)) exp(i (B0/2 - 2 B1)),
    B0 = h (H1 + H2) / 2,   B1 = sqrt(3) h (H2 - H1) / 12,

with the generator interpolated between grid nodes. Static generators use
exact exponentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .discretization import SpatialGrid, SmoothingGauge, adjoint_array, hermitian_function, smoothing_gauge
from .families import BlockOperatorFamily, assemble_blocks, block_density
from .geometry import ModelOperatorData

__all__ = [
    "Propagator",
    "StaticGenerator",
    "cauchy_generator",
    "asymptotic_generator",
    "max_step",
    "evolve",
    "evolve_path",
    "symplectic_form",
    "symplectic_defect",
    "group_defect",
    "uniform_bound_scan",
    "weight_propagation_scan",
    "interaction_residual",
    "PropagatorCache",
    "propagator_table",
    "static_diagonal_generator",
    "static_cauchy_generator",
]

STEP_SAFETY = 0.2
_GAUSS = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6


@dataclass(eq=False)
class Propagator:
    """``U(t, s)`` as a dense ``2N x 2N`` block together with its slice densities."""

    t: float
    s: float
    block: np.ndarray = field(repr=False)
    generator_id: str = "generator"
    frame: str = "ad"
    density_t: np.ndarray | None = field(default=None, repr=False)
    density_s: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.block)):
            raise FloatingPointError(f"non-finite propagator entries for {self.generator_id} ({self.t}, {self.s})")

    def __matmul__(self, other: "Propagator") -> "Propagator":
        if abs(self.s - other.t) > 1e-9:
            raise ValueError(f"cannot compose U({self.t},{self.s}) with U({other.t},{other.s})")
        return Propagator(self.t, other.s, self.block @ other.block, self.generator_id, self.frame,
                          self.density_t, other.density_s)

    def inverse(self) -> "Propagator":
        return Propagator(self.s, self.t, np.linalg.inv(self.block), self.generator_id, self.frame,
                          self.density_s, self.density_t)


@dataclass(eq=False)
class StaticGenerator:
    """Time-independent generator with exact exponentials.

    ``kind`` is ``"diagonal"`` for ``diag(eps, -eps)``, ``"cauchy"`` for
    ``[[0, 1], [a, 0]]`` (``eps = a^{1/2}``) and ``"general"`` otherwise.
    """

    matrix: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    kind: str = "general"
    eps: np.ndarray | None = field(default=None, repr=False)
    frame: str = "ad"
    name: str = "static"

    @property
    def n(self) -> int:
        return self.density.size

    def at(self, t: float) -> np.ndarray:
        return self.matrix

    def density_at(self, t: float) -> np.ndarray:
        return self.density

    def is_static(self) -> bool:
        return True

    def propagator(self, t: float, s: float) -> Propagator:
        tau = t - s
        d = self.density
        if self.kind == "diagonal":
            up = hermitian_function(self.eps, d, lambda lam: np.exp(1j * lam * tau))
            dn = hermitian_function(self.eps, d, lambda lam: np.exp(-1j * lam * tau))
            z = np.zeros_like(up)
            block = assemble_blocks(up, z, z, dn)
        elif self.kind == "cauchy":
            c = hermitian_function(self.eps, d, lambda lam: np.cos(lam * tau))
            s_over = hermitian_function(self.eps, d, lambda lam: np.sin(lam * tau) / lam)
            s_times = hermitian_function(self.eps, d, lambda lam: np.sin(lam * tau) * lam)
            block = assemble_blocks(c, 1j * s_over, 1j * s_times, c)
        else:
            block = expm(1j * tau * self.matrix)
        bd = block_density(d)
        return Propagator(t, s, block, self.name, self.frame, bd, bd)


def static_diagonal_generator(eps: np.ndarray, density: np.ndarray, name: str = "H_diag") -> StaticGenerator:
    z = np.zeros_like(eps)
    return StaticGenerator(assemble_blocks(eps, z, z, -eps), np.asarray(density), "diagonal", eps, "ad", name)


def static_cauchy_generator(a: np.ndarray, density: np.ndarray, name: str = "H_static") -> StaticGenerator:
    n = a.shape[0]
    eps = hermitian_function(a, density, lambda lam: np.sqrt(np.maximum(lam, 0)))
    H = assemble_blocks(np.zeros((n, n)), np.eye(n), a, np.zeros((n, n)))
    return StaticGenerator(H.astype(complex), np.asarray(density), "cauchy", eps, "cauchy", name)


def cauchy_generator(model: ModelOperatorData) -> BlockOperatorFamily:
    """``H(t) = [[0, 1], [a(t), i r(t)]]`` acting on ``(phi, i^{-1} d_t phi)``."""
    a = model.a.data
    nt, n, _ = a.shape
    zero = np.zeros_like(a)
    eye = np.broadcast_to(np.eye(n, dtype=complex), a.shape)
    ir = np.zeros_like(a)
    idx = np.arange(n)
    ir[:, idx, idx] = 1j * model.r_diag
    data = assemble_blocks(zero, eye, a, ir)
    return BlockOperatorFamily(model.times, data, model.a.density, "full", "cauchy", "H")


def asymptotic_generator(model: ModelOperatorData, direction: str, frame: str = "ad") -> StaticGenerator:
    """``diag(eps_{out/in}, -eps_{out/in})`` (ad frame) or ``[[0, 1], [a_{out/in}, 0]]`` (Cauchy frame)."""
    if direction not in ("out", "in"):
        raise ValueError("direction must be 'out' or 'in'")
    op = model.a_out if direction == "out" else model.a_in
    d = op.product.density
    if frame == "ad":
        eps = hermitian_function(op.entries, d, np.sqrt)
        return static_diagonal_generator(eps, d, f"H_ad_{direction}")
    if frame == "cauchy":
        return static_cauchy_generator(op.entries, d, f"H_{direction}")
    raise ValueError("frame must be 'ad' or 'cauchy'")


def _spectral_radius(gen) -> float:
    if isinstance(gen, StaticGenerator):
        if gen.eps is not None:
            return float(np.max(np.abs(np.linalg.eigvals(gen.eps))))
        return float(np.max(np.abs(np.linalg.eigvals(gen.matrix))))
    nt = gen.times.n
    idx = np.unique(np.linspace(0, nt - 1, min(nt, 9)).astype(int))
    return float(max(np.max(np.abs(np.linalg.eigvals(gen.data[j]))) for j in idx))


def max_step(gen) -> float:
    """Largest admissible step ``STEP_SAFETY / rho`` with ``rho`` the sampled spectral radius."""
    rho = _spectral_radius(gen)
    return STEP_SAFETY / max(rho, 1e-12)


def _cf4_step(gen, t0: float, h: float) -> np.ndarray:
    H1 = gen.at(t0 + _GAUSS[0] * h)
    H2 = gen.at(t0 + _GAUSS[1] * h)
    B0 = 0.5 * h * (H1 + H2)
    B1 = math.sqrt(3) / 12 * h * (H2 - H1)
    if getattr(gen, "structure", "full") == "diagonal":
        n = B0.shape[0] // 2
        out = np.zeros_like(B0)
        for sl in (slice(0, n), slice(n, 2 * n)):
            b0, b1 = B0[sl, sl], B1[sl, sl]
            out[sl, sl] = expm(1j * (0.5 * b0 + 2 * b1)) @ expm(1j * (0.5 * b0 - 2 * b1))
        return out
    return expm(1j * (0.5 * B0 + 2 * B1)) @ expm(1j * (0.5 * B0 - 2 * B1))


def _density_at(gen, t):
    return block_density(gen.density_at(t))


def _steps_between(a: float, b: float, hmax: float) -> int:
    return max(1, int(math.ceil(abs(b - a) / hmax - 1e-9)))


def evolve(gen, t: float, s: float, step: float | None = None, validate: bool = True) -> Propagator:
    """Solve ``d_t U = i gen(t) U`` with ``U(s, s) = 1``."""
    if isinstance(gen, StaticGenerator):
        return gen.propagator(t, s)
    for x in (t, s):
        if not gen.times.contains(x):
            raise ValueError(f"t={x} outside the generator's grid [{gen.times.start}, {gen.times.stop}]")
    hmax = max_step(gen)
    if step is not None:
        if validate and step > hmax * (1 + 1e-12):
            raise ValueError(f"step {step:.4g} violates |gen|*step <= {STEP_SAFETY} (max step {hmax:.4g})")
        hmax = step
    n2 = gen.data.shape[1]
    U = np.eye(n2, dtype=complex)
    if t != s:
        n = _steps_between(s, t, hmax)
        h = (t - s) / n
        for j in range(n):
            U = _cf4_step(gen, s + j * h, h) @ U
            if not np.all(np.isfinite(U)):
                raise FloatingPointError(f"non-finite propagator at t={s + (j + 1) * h}")
    return Propagator(t, s, U, gen.name, gen.frame, _density_at(gen, t), _density_at(gen, s))


def evolve_path(gen, s: float, targets, step: float | None = None, validate: bool = True) -> list[Propagator]:
    """``U(t, s)`` for every ``t`` in ``targets`` (monotone away from ``s``) from one sweep."""
    targets = [float(x) for x in targets]
    if isinstance(gen, StaticGenerator):
        return [gen.propagator(t, s) for t in targets]
    diffs = np.array(targets) - s
    if np.any(diffs > 0) and np.any(diffs < 0):
        raise ValueError("evolve_path targets must all lie on one side of s")
    order = np.argsort(np.abs(diffs), kind="stable")
    hmax = max_step(gen)
    if step is not None:
        if validate and step > hmax * (1 + 1e-12):
            raise ValueError(f"step {step:.4g} violates |gen|*step <= {STEP_SAFETY} (max step {hmax:.4g})")
        hmax = step
    n2 = gen.data.shape[1]
    U = np.eye(n2, dtype=complex)
    cur = s
    out: list = [None] * len(targets)
    for j in order:
        t = targets[j]
        if t != cur:
            n = _steps_between(cur, t, hmax)
            h = (t - cur) / n
            for i in range(n):
                U = _cf4_step(gen, cur + i * h, h) @ U
            if not np.all(np.isfinite(U)):
                raise FloatingPointError(f"non-finite propagator at t={t}")
            cur = t
        out[j] = Propagator(t, s, U.copy(), gen.name, gen.frame, _density_at(gen, t), _density_at(gen, s))
    return out


class PropagatorCache:
    """In-memory cache keyed by ``(generator_id, t, s)``, composing stored segments."""

    def __init__(self):
        self._store: dict = {}

    @staticmethod
    def _key(gid, t, s):
        return (gid, round(float(t), 9), round(float(s), 9))

    def put(self, U: Propagator) -> None:
        self._store[self._key(U.generator_id, U.t, U.s)] = U

    def get(self, gid: str, t: float, s: float) -> Propagator | None:
        return self._store.get(self._key(gid, t, s))

    def __len__(self):
        return len(self._store)

    def items(self):
        return self._store.items()

    def propagate(self, gen, t: float, s: float, **kw) -> Propagator:
        hit = self.get(gen.name, t, s)
        if hit is None:
            hit = evolve(gen, t, s, **kw)
            self.put(hit)
        return hit


def symplectic_form(n: int, frame: str) -> np.ndarray:
    """``q = [[0, 1], [1, 0]]`` on Cauchy data, ``q_ad = diag(1, -1)`` in the ad frame."""
    if frame == "cauchy":
        z, e = np.zeros((n, n)), np.eye(n)
        return assemble_blocks(z, e, e, z)
    return np.diag(np.r_[np.ones(n), -np.ones(n)]).astype(float)


def _charge_balance(grid: SpatialGrid | None, n: int) -> np.ndarray | None:
    if grid is None:
        return None
    w = grid.fourier_multiplier((1.0 + grid.wavenumbers**2) ** 0.25)
    wi = grid.fourier_multiplier((1.0 + grid.wavenumbers**2) ** -0.25)
    z = np.zeros((n, n))
    return assemble_blocks(w, z, z, wi), assemble_blocks(wi, z, z, w)


def symplectic_defect(U: Propagator, q_form: np.ndarray | None = None, grid: SpatialGrid | None = None) -> float:
    """``||U^* q U - q||`` with ``U^* = D_s^{-1} U^H D_t`` (slice densities).

    In the Cauchy frame the two components carry different Sobolev charges,
    so when a grid is given the defect is measured as
    ``||E^{-1}(U^* q U - q)E^{-1}||`` with ``E = diag(<D>^{1/2}, <D>^{-1/2})``.
    """
    n = U.block.shape[0] // 2
    q = symplectic_form(n, U.frame) if q_form is None else q_form
    dt = U.density_t if U.density_t is not None else np.ones(2 * n)
    ds = U.density_s if U.density_s is not None else np.ones(2 * n)
    Us = np.conj(U.block.T) * dt[None, :] / ds[:, None]
    D = Us @ q @ U.block - q
    if U.frame == "cauchy" and grid is not None:
        E, Ei = _charge_balance(grid, n)
        D = Ei @ D @ Ei
    return float(np.linalg.norm(D, 2))


def group_defect(gen, t: float, tp: float, s: float, **kw) -> float:
    """``||U(t, t') U(t', s) - U(t, s)|| / ||U(t, s)||``."""
    a = evolve(gen, t, tp, **kw)
    b = evolve(gen, tp, s, **kw)
    c = evolve(gen, t, s, **kw)
    return float(np.linalg.norm((a @ b).block - c.block, 2) / np.linalg.norm(c.block, 2))


def _fourier_block(grid: SpatialGrid, nb: int) -> np.ndarray:
    return np.kron(np.eye(nb), grid.fourier_matrix())


def _sobolev_norm(A: np.ndarray, grid: SpatialGrid, m_left: float, m_right: float,
                  dens_left: np.ndarray | None = None, dens_right: np.ndarray | None = None) -> float:
    nb = A.shape[0] // grid.n_points
    if dens_left is not None:
        A = A * np.sqrt(dens_left)[:, None] / np.sqrt(dens_right)[None, :]
    Fb = _fourier_block(grid, nb)
    Ak = Fb @ A @ Fb.conj().T
    w = 1.0 + grid.wavenumbers**2
    wl = np.tile(w ** (m_left / 2), nb)
    wr = np.tile(w ** (m_right / 2), nb)
    return float(np.linalg.norm(wl[:, None] * Ak * wr[None, :], 2))


@dataclass
class BoundScan:
    times: np.ndarray = field(repr=False)
    values: dict = field(repr=False)
    sup: dict = field(default_factory=dict)
    factor: float = 3.0
    flagged: bool = False
    trend: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"sup": {str(k): v for k, v in self.sup.items()}, "factor": self.factor, "flagged": self.flagged,
                "trend": {str(k): v for k, v in self.trend.items()}}


def _trend(vals: np.ndarray) -> float:
    """Ratio of the second-half maximum to the first-half maximum."""
    h = max(1, vals.size // 2)
    return float(np.max(vals[h:]) / max(np.max(vals[:h]), 1e-300)) if vals.size > 1 else 1.0


def uniform_bound_scan(gen, horizon: float, orders, grid: SpatialGrid, factor: float = 3.0,
                       n_samples: int = 41, start: float = 0.0) -> BoundScan:
    """``max_t ||<D>^m U(t, start) <D>^{-m}||`` for ``t`` in ``[start, start + horizon]``."""
    ts = np.linspace(start, start + horizon, n_samples)
    path = evolve_path(gen, start, ts)
    values = {m: np.array([_sobolev_norm(U.block, grid, m, -m, U.density_t, U.density_s) for U in path])
              for m in orders}
    sup = {m: float(v.max()) for m, v in values.items()}
    return BoundScan(ts, values, sup, factor, any(v > factor for v in sup.values()),
                     {m: _trend(v) for m, v in values.items()})


def weight_propagation_scan(gen, m: float, k: float, horizon: float, grid: SpatialGrid,
                            factor: float = 5.0, n_samples: int = 41, table: np.ndarray | None = None) -> BoundScan:
    """``sup_t ||<D>^m <x>^k U(0, t) (<x> + <t>)^{-k} <D>^{-m}||`` over ``t`` in ``[0, horizon]``.

    ``table`` may supply ``U(t, 0)`` at ``linspace(0, horizon, n_samples)``.
    """
    ts = np.linspace(0.0, horizon, n_samples)
    if table is None:
        path = evolve_path(gen, 0.0, ts)
    else:
        path = [Propagator(t, 0.0, U, gen.name, gen.frame, _density_at(gen, t), _density_at(gen, 0.0))
                for t, U in zip(ts, table)]
    xw = np.sqrt(1.0 + grid.signed_distance**2)
    nb = path[0].block.shape[0] // grid.n_points
    xk = np.tile(xw**k, nb)
    vals = []
    for t, U in zip(ts, path):
        Ui = U.inverse()
        right = np.tile((xw + math.sqrt(1 + t * t)) ** (-k), nb)
        A = xk[:, None] * Ui.block * right[None, :]
        vals.append(_sobolev_norm(A, grid, m, -m, Ui.density_t, Ui.density_s))
    vals = np.array(vals)
    return BoundScan(ts, {m: vals}, {m: float(vals.max())}, factor, bool(vals.max() > factor),
                     {m: _trend(vals)})


def interaction_residual(pack, t: float, s: float, grid: SpatialGrid, orders=(0, 1, 2, 3),
                         U: Propagator | None = None, U_d: Propagator | None = None,
                         k_band: float | None = None) -> tuple[SmoothingGauge, float]:
    """Gauge of ``U(t, s) - T(t) U^d(t, s) T(s)^{-1}`` and its Fourier tail beyond ``k_band``.

    The tail is the largest entry (in the unitary Fourier basis, both
    components) with ``|k| > k_band`` on either side, relative to the largest
    entry overall.
    """
    if U is None:
        U = evolve(cauchy_generator(pack.model), t, s)
    if U_d is None:
        U_d = evolve(pack.H_d, t, s)
    D = U.block - pack.T_at(t) @ U_d.block @ pack.T_inv_at(s)
    gauge = smoothing_gauge(D, orders, grid)
    nb = D.shape[0] // grid.n_points
    Fb = _fourier_block(grid, nb)
    Dk = np.abs(Fb @ D @ Fb.conj().T)
    if k_band is None:
        k_band = np.max(np.abs(grid.wavenumbers)) / 2
    outside = np.tile(np.abs(grid.wavenumbers) > k_band, nb)
    tail = np.max(np.where(outside[:, None] | outside[None, :], Dk, 0.0)) / max(Dk.max(), 1e-300)
    return gauge, float(tail)


def propagator_table(gen, times, origin: float = 0.0, step: float | None = None) -> np.ndarray:
    """Stack of ``U(t, origin)`` for every ``t`` in ``times`` (either side of ``origin``)."""
    times = np.asarray(times, dtype=float)
    n2 = 2 * (gen.n if isinstance(gen, StaticGenerator) else gen.n)
    out = np.empty((times.size, n2, n2), dtype=complex)
    fwd = np.flatnonzero(times >= origin)
    bwd = np.flatnonzero(times < origin)
    for sel in (fwd, bwd):
        if sel.size:
            path = evolve_path(gen, origin, times[sel], step=step)
            for j, U in zip(sel, path):
                out[j] = U.block
    return out
