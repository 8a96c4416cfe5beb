"""Moller operators, commutator compactness and Fredholm diagnostics.

In the ad frame the Moller operators are the limits

    W_{out/in} = lim U_ad(0, t) U_ad_{out/in}(t, 0),   t -> +/- infinity,

with ``U_ad_{out/in}`` generated by ``diag(eps_{out/in}, -eps_{out/in})``.
They preserve ``q_ad = diag(1, -1)``, so the inverse equals the adjoint
``W^dagger = q_ad W^* q_ad``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import SpatialGrid, SmoothingGauge, smoothing_gauge
from .evolution import StaticGenerator, propagator_table, symplectic_form
from .states import fit_power_law

__all__ = [
    "MollerOperator",
    "FredholmReport",
    "moller",
    "q_adjoint",
    "commutator_compactness",
    "fredholm_scan",
    "singular_value_profile",
]


def q_adjoint(W: np.ndarray, q: np.ndarray, density_left: np.ndarray | None = None,
              density_right: np.ndarray | None = None) -> np.ndarray:
    """``q W^* q`` with ``W^*`` the adjoint from the right product to the left product."""
    Ws = W.conj().T
    if density_left is not None:
        Ws = Ws * density_left[None, :] / density_right[:, None]
    return q @ Ws @ q


@dataclass(eq=False)
class MollerOperator:
    direction: str
    w: np.ndarray = field(repr=False)
    w_inverse: np.ndarray = field(repr=False)
    horizon_used: float
    convergence_history: list = field(default_factory=list)
    rate: float = float("nan")
    converged: bool = False
    frame: str = "ad"
    density_left: np.ndarray | None = field(default=None, repr=False)
    density_right: np.ndarray | None = field(default=None, repr=False)

    @property
    def q(self) -> np.ndarray:
        return symplectic_form(self.w.shape[0] // 2, self.frame)

    @property
    def w_dagger(self) -> np.ndarray:
        return q_adjoint(self.w, self.q, self.density_left, self.density_right)

    def report(self) -> dict:
        eye = np.eye(self.w.shape[0])
        return {
            "inverse_defect": float(np.linalg.norm(self.w @ self.w_inverse - eye, 2)),
            "inverse_vs_adjoint": float(np.linalg.norm(self.w_inverse - self.w_dagger, 2)),
            "isometry_defect": float(np.linalg.norm(self.w_dagger @ self.w - eye, 2)),
            "rate": self.rate,
            "converged": self.converged,
            "horizon": self.horizon_used,
        }


def moller(
    direction: str,
    generator,
    asymptotic: StaticGenerator,
    horizons=None,
    first: float = 5.0,
    ratio: float = 2.0,
    tol: float = 1e-6,
    table: np.ndarray | None = None,
) -> MollerOperator:
    """``W(t) = U(0, t) U_asym(t, 0)`` along a geometric horizon schedule.

    The inverse is evaluated independently as ``U_asym(0, t) U(t, 0)``;
    ``report()`` compares it with the ``q``-adjoint. ``table`` may supply
    precomputed ``U(t, 0)`` for the horizons.
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
    if not horizons:
        raise ValueError("empty horizon schedule")
    times = [sign * h for h in horizons]
    Us = propagator_table(generator, times) if table is None else table
    Ws, Wis = [], []
    for t, U in zip(times, Us):
        A = asymptotic.propagator(t, 0.0).block
        Ai = asymptotic.propagator(0.0, t).block
        Ws.append(np.linalg.solve(U, A))
        Wis.append(Ai @ U)
    history = []
    for j in range(1, len(Ws)):
        history.append((horizons[j - 1], float(np.linalg.norm(Ws[j] - Ws[j - 1], 2))))
    rate = fit_power_law(np.array([h for h, _ in history]), np.array([d for _, d in history])) \
        if len(history) >= 2 else float("nan")
    converged = bool(history and history[-1][1] < tol)
    from .families import block_density

    dl = block_density(generator.density_at(0.0))
    dr = block_density(asymptotic.density)
    return MollerOperator(direction, Ws[-1], Wis[-1], horizons[-1], history, rate, converged,
                          generator.frame, dl, dr)


def singular_value_profile(A: np.ndarray, threshold: float = 1e-6) -> dict:
    """Sorted singular values, effective rank above ``threshold`` and the decay across the spectrum."""
    s = np.linalg.svd(A, compute_uv=False)
    smax = float(s[0]) if s.size else 0.0
    floor = max(float(s[-1]), 1e-300) if s.size else 1e-300
    return {
        "singular_values": s,
        "effective_rank": int(np.sum(s > threshold)),
        "orders_of_decay": float(np.log10(max(smax, 1e-300) / floor)) if smax > 0 else 0.0,
        "threshold": threshold,
    }


def commutator_compactness(w: MollerOperator, grid: SpatialGrid | None = None, orders=(0, 1, 2),
                           weights=None, threshold: float = 1e-6) -> dict:
    """Singular values of ``[W, pi+]`` and the gauge of ``W pi+ W^{-1} - pi+``.

    ``weights`` is a list of ``(m, alpha)`` pairs for the spatially weighted
    gauge (``alpha`` should stay below ``delta / 2``).
    """
    n = w.w.shape[0] // 2
    p = np.diag(np.r_[np.ones(n), np.zeros(n)])
    comm = w.w @ p - p @ w.w
    prof = singular_value_profile(comm, threshold)
    out = {"commutator": prof}
    if grid is not None:
        X = w.w @ p @ w.w_inverse - p
        out["conjugated_gauge"] = smoothing_gauge(X, orders, grid, spatial_orders=weights)
    return out


@dataclass
class FredholmReport:
    singular_values: np.ndarray = field(repr=False)
    kernel_dim: int = 0
    cokernel_dim: int = 0
    threshold: float = 0.0
    spectral_gap: float = float("inf")
    K1: dict = field(default_factory=dict, repr=False)
    K2: dict = field(default_factory=dict, repr=False)

    @property
    def index(self) -> int:
        return self.kernel_dim - self.cokernel_dim

    def as_dict(self) -> dict:
        return {
            "kernel_dim": self.kernel_dim,
            "cokernel_dim": self.cokernel_dim,
            "index": self.index,
            "threshold": self.threshold,
            "spectral_gap": self.spectral_gap,
            "sigma_max": float(self.singular_values[0]),
            "sigma_min": float(self.singular_values[-1]),
            "K1_orders_of_decay": self.K1.get("orders_of_decay"),
            "K2_orders_of_decay": self.K2.get("orders_of_decay"),
            "K2_effective_rank": self.K2.get("effective_rank"),
        }


def _dims(s: np.ndarray, thr: float) -> tuple[int, float]:
    small = int(np.sum(s < thr))
    r = s.size - small
    if 0 < r < s.size:
        gap = float(s[r - 1] / max(s[r], 1e-300))
    elif r == s.size:
        gap = float(s[-1] / thr)
    else:
        gap = 0.0
    return small, gap


def fredholm_scan(w_out: MollerOperator, w_in: MollerOperator, c_plus: np.ndarray, c_minus: np.ndarray,
                  rel_threshold: float = 1e-6, k_threshold: float = 1e-6) -> FredholmReport:
    """SVD diagnostics of ``A = c- W_out^{-1} + c+ W_in^{-1}`` and of ``W_F W_F^dagger - 1``, ``W_F^dagger W_F - 1``.

    ``c+-`` are the vacuum covariances in the Moller operators' frame (``pi+-``
    in the ad frame). ``W_F = W_out pi+ + W_in pi-`` and its ``q``-adjoint
    ``pi+ W_out^dagger + pi- W_in^dagger``.
    """
    A = c_minus @ w_out.w_inverse + c_plus @ w_in.w_inverse
    s = np.linalg.svd(A, compute_uv=False)
    thr = rel_threshold * s[0]
    kdim, gap = _dims(s, thr)
    s_adj = np.linalg.svd(A.conj().T, compute_uv=False)
    cdim, _ = _dims(s_adj, thr)
    n = A.shape[0] // 2
    p = np.diag(np.r_[np.ones(n), np.zeros(n)])
    pm = np.eye(2 * n) - p
    WF = w_out.w @ p + w_in.w @ pm
    WFd = p @ w_out.w_dagger + pm @ w_in.w_dagger
    eye = np.eye(2 * n)
    K1 = singular_value_profile(WF @ WFd - eye, k_threshold)
    K2 = singular_value_profile(WFd @ WF - eye, k_threshold)
    return FredholmReport(s, kdim, cdim, float(thr), gap, K1, K2)
