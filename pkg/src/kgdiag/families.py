"""Time-indexed operator families sampled on a uniform time grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretization import OperatorMatrix, WeightedProduct, adjoint_array
from .timegrid import TimeGrid, apply_time_derivative, interpolate


@dataclass(eq=False)
class OperatorFamily:
    """Slices ``data[j]`` (``N x N``) at ``times.values[j]`` with per-slice densities."""

    times: TimeGrid
    data: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    order: float | None = None
    decay: float | None = None

    def __post_init__(self):
        if self.data.shape[0] != self.times.n or self.density.shape[0] != self.times.n:
            raise ValueError("family data must have one slice per time node")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("family slices must be finite")

    @property
    def n(self) -> int:
        return self.density.shape[1]

    def slice(self, t: float) -> OperatorMatrix:
        j = self.times.index_of(t)
        return OperatorMatrix(self.data[j], WeightedProduct(self.density[j]))

    def adjoint(self) -> np.ndarray:
        return adjoint_array(self.data, self.density)

    def derivative(self, order: int = 8) -> np.ndarray:
        return apply_time_derivative(self.data, self.times.dt, order)

    def at(self, t: float, width: int = 8) -> np.ndarray:
        return interpolate(self.data, self.times, t, width)

    def with_data(self, data: np.ndarray, **kw) -> "OperatorFamily":
        return OperatorFamily(self.times, data, self.density, kw.get("order"), kw.get("decay"))


@dataclass(eq=False)
class BlockOperatorFamily:
    """``2N x 2N`` slices acting on pairs; ``structure`` is ``"full"`` or ``"diagonal"``.

    ``frame`` records whether the pairs are Cauchy data (``"cauchy"``) or the
    diagonalized components (``"ad"``); it selects the norm used in reports.
    """

    times: TimeGrid
    data: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    structure: str = "full"
    frame: str = "ad"
    name: str = "generator"

    def __post_init__(self):
        if self.data.shape[0] != self.times.n:
            raise ValueError("family data must have one slice per time node")
        if self.data.shape[1] != 2 * self.density.shape[1]:
            raise ValueError("block slices must be 2N x 2N")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("block family slices must be finite")

    @property
    def n(self) -> int:
        return self.density.shape[1]

    def at(self, t: float, width: int = 8) -> np.ndarray:
        return interpolate(self.data, self.times, t, width)

    def density_at(self, t: float) -> np.ndarray:
        return interpolate(self.density, self.times, t, 8)

    def block(self, i: int, k: int) -> np.ndarray:
        n = self.n
        return self.data[:, i * n : (i + 1) * n, k * n : (k + 1) * n]

    def is_static(self) -> bool:
        return bool(np.all(self.data == self.data[:1]) and np.all(self.density == self.density[:1]))


def assemble_blocks(b11, b12, b21, b22) -> np.ndarray:
    """Stack four ``(..., N, N)`` arrays into ``(..., 2N, 2N)``."""
    top = np.concatenate([b11, b12], axis=-1)
    bottom = np.concatenate([b21, b22], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def block_density(density: np.ndarray) -> np.ndarray:
    return np.concatenate([density, density], axis=-1)
