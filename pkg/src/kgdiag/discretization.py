"""Periodic spatial grid, spectral differentiation, weighted products and gauges.

Operators are dense ``N x N`` complex arrays acting on grid values. A
:class:`WeightedProduct` carries the density ``d_j`` (metric volume factor times
quadrature weight) defining ``<u, v> = sum_j conj(u_j) v_j d_j``; adjoints and
spectral calculus are taken with respect to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpatialGrid",
    "WeightedProduct",
    "OperatorMatrix",
    "SmoothingGauge",
    "build_grid",
    "sobolev_weight",
    "weighted_adjoint",
    "smoothing_gauge",
    "position_weight",
    "adjoint_array",
    "hermitian_function",
    "weighted_norm",
    "spectral_norms",
]


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Uniform periodic grid ``x_j = j L / N`` with FFT-ordered wavenumbers."""

    n_points: int
    length: float
    points: np.ndarray = field(repr=False)
    wavenumbers: np.ndarray = field(repr=False)

    @property
    def spacing(self) -> float:
        return self.length / self.n_points

    @property
    def center(self) -> float:
        return self.length / 2

    @property
    def signed_distance(self) -> np.ndarray:
        """Signed distance of each point from the grid centre, in ``[-L/2, L/2)``."""
        return self.points - self.center

    def fourier_matrix(self) -> np.ndarray:
        """Unitary DFT matrix ``F`` with ``(F u)_k = N^{-1/2} sum_j u_j exp(-i k x_j)``."""
        return np.fft.fft(np.eye(self.n_points), axis=0, norm="ortho")

    def fourier_multiplier(self, symbol: np.ndarray) -> np.ndarray:
        """Dense matrix of the operator acting as ``symbol[k]`` on the k-th mode."""
        eye = np.eye(self.n_points)
        return np.fft.ifft(symbol[:, None] * np.fft.fft(eye, axis=0), axis=0)

    def derivative_matrix(self) -> np.ndarray:
        """Spectral ``d/dx`` (anti-Hermitian; the Nyquist mode keeps its signed wavenumber)."""
        return self.fourier_multiplier(1j * self.wavenumbers)

    def to_fourier(self, A: np.ndarray) -> np.ndarray:
        """Matrix of ``A`` in the (unitary) Fourier basis."""
        F = self.fourier_matrix()
        return F @ A @ F.conj().T

    def uniform_product(self) -> "WeightedProduct":
        return WeightedProduct(np.full(self.n_points, self.spacing))


def build_grid(n_points: int, length: float) -> SpatialGrid:
    """Periodic grid of ``n_points`` (a power of two, at least 8) on ``[0, length)``."""
    n = int(n_points)
    if n != n_points or n < 8 or n & (n - 1):
        raise ValueError(f"n_points must be a power of two >= 8, got {n_points}")
    if not length > 0:
        raise ValueError(f"length must be positive, got {length}")
    points = np.arange(n) * (length / n)
    wavenumbers = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
    return SpatialGrid(n, float(length), points, wavenumbers)


@dataclass(frozen=True, eq=False)
class WeightedProduct:
    """Inner product with positive density vector (quadrature weight included)."""

    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=float)
        if d.ndim != 1 or not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("density must be a finite, strictly positive vector")
        object.__setattr__(self, "density", d)

    def inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        return complex(np.sum(np.conj(u) * v * self.density))

    def adjoint(self, A: np.ndarray) -> np.ndarray:
        return adjoint_array(A, self.density)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    entries: np.ndarray
    product: WeightedProduct

    def __post_init__(self):
        A = np.asarray(self.entries, dtype=complex)
        n = self.product.density.size
        if A.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} matrix, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("operator entries must be finite")
        object.__setattr__(self, "entries", A)

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.entries @ other.entries, self.product)

    def self_adjointness_defect(self) -> float:
        A = self.entries
        return float(np.linalg.norm(A - self.product.adjoint(A)) / max(np.linalg.norm(A), 1e-300))


@dataclass(frozen=True)
class SmoothingGauge:
    """Weighted norms ``values[m] = ||<D>^m A <D>^m||`` over a ladder of orders."""

    orders: tuple
    values: dict
    spatial_orders: dict | None = None
    weight_max: float | None = None

    def decay_ratio(self) -> float:
        """``values[max order] / values[min order]``."""
        lo, hi = min(self.orders), max(self.orders)
        return self.values[hi] / max(self.values[lo], 1e-300)

    def relative(self, m) -> float:
        """``values[m]`` over its worst case ``values[m0] <k_max>^{2 (m - m0)}`` (``m0`` the lowest order).

        An order-zero operator concentrated on the top modes scores 1 at
        every order; a smoothing operator scores values that fall with ``m``.
        """
        if self.weight_max is None:
            raise ValueError("relative gauge values need the grid's maximal weight")
        lo = min(self.orders)
        base = max(self.values[lo], 1e-300)
        return self.values[m] / (base * self.weight_max ** (2 * (m - lo)))

    def relative_decay(self) -> float:
        """``relative(max order)``: orders of magnitude gained over the worst case."""
        return self.relative(max(self.orders))

    def as_dict(self) -> dict:
        out = {"orders": list(self.orders), "values": {str(m): float(v) for m, v in self.values.items()}}
        if self.weight_max is not None:
            out["relative"] = {str(m): float(self.relative(m)) for m in self.orders}
        if self.spatial_orders:
            out["spatial_orders"] = {f"{m},{k}": float(v) for (m, k), v in self.spatial_orders.items()}
        return out


def adjoint_array(A: np.ndarray, density: np.ndarray) -> np.ndarray:
    """``D^{-1} A^H D`` broadcast over leading axes (``density`` has shape ``(..., n)``)."""
    d = np.asarray(density)
    AH = np.conj(np.swapaxes(A, -1, -2))
    return AH * d[..., None, :] / d[..., :, None]


def hermitian_function(A: np.ndarray, density: np.ndarray, fn, check: bool = True) -> np.ndarray:
    """Apply ``fn`` to the spectrum of ``A``, self-adjoint in the weighted product.

    Broadcasts over leading axes. ``fn`` receives the real eigenvalue array
    (shape ``(..., n)``) and returns the transformed values.
    """
    s = np.sqrt(np.asarray(density, dtype=float))
    Ah = A * s[..., :, None] / s[..., None, :]
    Ah = 0.5 * (Ah + np.conj(np.swapaxes(Ah, -1, -2)))
    lam, V = np.linalg.eigh(Ah)
    f = fn(lam)
    out = (V * f[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
    return out / s[..., :, None] * s[..., None, :]


def spectral_norms(stack: np.ndarray) -> np.ndarray:
    """Spectral norm of every matrix in a stack, from the largest eigenvalue of ``A^H A`` (cheaper than SVD)."""
    G = np.conj(np.swapaxes(stack, -1, -2)) @ stack
    return np.sqrt(np.maximum(np.linalg.eigvalsh(G)[..., -1], 0.0))


def weighted_norm(A: np.ndarray, density_left: np.ndarray, density_right: np.ndarray | None = None) -> float:
    """Operator norm from the right product to the left product."""
    if density_right is None:
        density_right = density_left
    sl = np.sqrt(density_left)
    sr = np.sqrt(density_right)
    return float(np.linalg.norm(A * sl[:, None] / sr[None, :], 2))


def sobolev_weight(grid: SpatialGrid, m: float) -> OperatorMatrix:
    """Fourier multiplier ``<D>^m`` with eigenvalues ``(1 + k^2)^{m/2}``."""
    W = grid.fourier_multiplier((1.0 + grid.wavenumbers**2) ** (m / 2))
    return OperatorMatrix(W, grid.uniform_product())


def weighted_adjoint(A: OperatorMatrix) -> OperatorMatrix:
    """Adjoint ``D^{-1} A^H D`` in the operator's weighted product."""
    return OperatorMatrix(A.product.adjoint(A.entries), A.product)


def position_weight(grid: SpatialGrid, k: float) -> OperatorMatrix:
    """Multiplication by ``<x>^k`` with ``x`` the signed distance from the grid centre."""
    xt = grid.signed_distance
    return OperatorMatrix(np.diag((1.0 + xt**2) ** (k / 2)).astype(complex), grid.uniform_product())


def _sobolev_diag(grid: SpatialGrid, m: float) -> np.ndarray:
    return (1.0 + grid.wavenumbers**2) ** (m / 2)


def smoothing_gauge(
    A: OperatorMatrix | np.ndarray,
    orders,
    grid: SpatialGrid | None = None,
    spatial_orders=None,
) -> SmoothingGauge:
    """Table of ``||<D>^m A <D>^m||_2`` (and optionally ``<x>^k``-weighted variants).

    ``A`` may be ``N x N`` or a ``2N x 2N`` block operator, in which case the
    weight acts blockwise. The norm is taken in the Fourier basis, so the
    weights are diagonal there.
    """
    orders = tuple(orders)
    if not orders:
        raise ValueError("orders must be nonempty")
    M = A.entries if isinstance(A, OperatorMatrix) else np.asarray(A, dtype=complex)
    n = M.shape[0]
    if grid is None:
        raise ValueError("a SpatialGrid is needed to evaluate Sobolev weights")
    nb = n // grid.n_points
    F = grid.fourier_matrix()
    Fb = np.kron(np.eye(nb), F)
    Mk = Fb @ M @ Fb.conj().T
    values = {}
    for m in orders:
        w = np.tile(_sobolev_diag(grid, m), nb)
        values[m] = float(np.linalg.norm(w[:, None] * Mk * w[None, :], 2))
    spatial = None
    if spatial_orders:
        xw = (1.0 + grid.signed_distance**2) ** 0.5
        spatial = {}
        for m, k in spatial_orders:
            X = np.tile(xw**k, nb)
            inner = X[:, None] * M * X[None, :]
            ik = Fb @ inner @ Fb.conj().T
            w = np.tile(_sobolev_diag(grid, m), nb)
            spatial[(m, k)] = float(np.linalg.norm(w[:, None] * ik * w[None, :], 2))
    wmax = float(np.sqrt(1.0 + np.max(grid.wavenumbers**2)))
    return SmoothingGauge(orders, values, spatial, wmax)
