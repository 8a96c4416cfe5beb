"""Uniform time grids, finite-difference stencils and local interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def fd_weights(nodes: np.ndarray, x0: float, deriv: int) -> np.ndarray:
    """Finite-difference weights for the ``deriv``-th derivative at ``x0``.

    Fornberg's recursion; ``deriv = 0`` gives Lagrange interpolation weights.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    c = np.zeros((n, deriv + 1))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, deriv)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, deriv]


@lru_cache(maxsize=64)
def _stencil_table(width: int, deriv: int) -> np.ndarray:
    """Weights for every offset of the evaluation point inside a ``width`` stencil.

    Row ``j`` holds the weights (unit spacing) for evaluating at node ``j`` of
    nodes ``0..width-1``; the middle row is the central stencil.
    """
    nodes = np.arange(width, dtype=float)
    return np.array([fd_weights(nodes, float(j), deriv) for j in range(width)])


def apply_time_derivative(data: np.ndarray, dt: float, order: int = 8, deriv: int = 1) -> np.ndarray:
    """Differentiate ``data`` along axis 0 with a uniform-grid stencil.

    Interior points use the centred stencil of accuracy ``order``; the first
    and last ``order // 2`` points use one-sided stencils of the same width.
    """
    if order % 2 or order < 2:
        raise ValueError("stencil order must be an even integer >= 2")
    nt = data.shape[0]
    width = order + 1 + (2 * ((deriv - 1) // 2) if deriv > 1 else 0)
    if nt < width:
        raise ValueError(f"need at least {width} time samples for a stencil of order {order}")
    table = _stencil_table(width, deriv) / dt**deriv
    half = width // 2
    out = np.empty_like(data, dtype=np.result_type(data, float))
    # differences against the evaluation node make constants differentiate to exactly zero
    centre = table[half]
    interior = slice(half, nt - half)
    base = data[interior]
    acc = out[interior]
    acc[...] = 0.0
    tmp = np.empty_like(acc)
    for j, w in enumerate(centre):
        if w != 0.0 and j != half:
            np.subtract(data[j : nt - width + 1 + j], base, out=tmp)
            tmp *= w
            acc += tmp
    del tmp
    for i in range(half):
        head, tail = data[:width], data[nt - width :]
        out[i] = np.tensordot(table[i], head - head[i], axes=(0, 0))
        j = width - 1 - i
        out[nt - 1 - i] = np.tensordot(table[j], tail - tail[j], axes=(0, 0))
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = start + j * dt`` for ``j = 0 .. n - 1``."""

    start: float
    stop: float
    n: int

    def __post_init__(self):
        if self.n < 2 or not self.stop > self.start:
            raise ValueError("time grid needs stop > start and at least two samples")

    @classmethod
    def from_step(cls, start: float, stop: float, dt: float) -> "TimeGrid":
        n = int(round((stop - start) / dt)) + 1
        return cls(float(start), float(start + (n - 1) * dt), n)

    @classmethod
    def symmetric(cls, horizon: float, dt: float) -> "TimeGrid":
        return cls.from_step(-horizon, horizon, dt)

    @property
    def dt(self) -> float:
        return (self.stop - self.start) / (self.n - 1)

    @property
    def values(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.n)

    def contains(self, t: float) -> bool:
        eps = 1e-9 * self.dt
        return self.start - eps <= t <= self.stop + eps

    def index_of(self, t: float) -> int:
        """Index of the node at ``t``; raises if ``t`` is not a node."""
        x = (t - self.start) / self.dt
        j = int(round(x))
        if abs(x - j) > 1e-8 or not 0 <= j < self.n:
            raise ValueError(f"t={t} is not a node of the time grid")
        return j

    def interpolation_stencil(self, t: float, width: int = 8) -> tuple[slice, np.ndarray]:
        """Local Lagrange stencil (``width`` nodes) for evaluating at ``t``."""
        if not self.contains(t):
            raise ValueError(f"t={t} outside the time grid [{self.start}, {self.stop}]")
        width = min(width, self.n)
        x = (t - self.start) / self.dt
        j0 = int(np.floor(x)) - (width // 2 - 1)
        j0 = min(max(j0, 0), self.n - width)
        nodes = np.arange(j0, j0 + width, dtype=float)
        w = fd_weights(nodes, x, 0)
        return slice(j0, j0 + width), w


def interpolate(data: np.ndarray, grid: TimeGrid, t: float, width: int = 8) -> np.ndarray:
    """Evaluate a sampled family at ``t`` by local Lagrange interpolation."""
    sl, w = grid.interpolation_stencil(t, width)
    return np.tensordot(w, data[sl], axes=(0, 0))
