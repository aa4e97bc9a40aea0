"""Uniform time grids and grid-sampled (matrix-valued) functions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridError

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """The nodes ``0, step, 2*step, ..., horizon``."""

    step: float
    horizon: float

    def __post_init__(self):
        if not self.step > 0:
            raise GridError(f"grid step must be positive, got {self.step}")
        if self.horizon < 0:
            raise GridError(f"grid horizon must be nonnegative, got {self.horizon}")
        ratio = self.horizon / self.step
        if abs(ratio - round(ratio)) > _ALIGN_TOL * max(1.0, ratio):
            raise GridError(f"horizon {self.horizon} is not a multiple of step {self.step}")

    @property
    def n(self) -> int:
        """Number of panels."""
        return int(round(self.horizon / self.step))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.step

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.step

    def index(self, t: float) -> int:
        """Index of the node at time ``t``; raises :class:`GridError` off-grid."""
        k = t / self.step
        i = int(round(k))
        if abs(k - i) > _ALIGN_TOL * max(1.0, k) or not 0 <= i <= self.n:
            raise GridError(f"t={t} is not a node of the grid (step {self.step}, horizon {self.horizon})")
        return i

    def extended(self, horizon: float) -> "Grid":
        """Same step, horizon rounded up to the next node at or after ``horizon``."""
        return Grid(self.step, math.ceil(horizon / self.step - _ALIGN_TOL) * self.step)

    @classmethod
    def covering(cls, t: float, step: float) -> "Grid":
        """Grid of ``step`` ending exactly at ``t`` (which must be a multiple of ``step``)."""
        return cls(step, t)


def check_atoms(dists, step: float) -> None:
    """Every atom of every law in ``dists`` must sit on a grid node."""
    for d in dists:
        for a in d.atoms():
            k = a / step
            if abs(k - round(k)) > _ALIGN_TOL * max(1.0, k):
                raise GridError(f"atom at {a} of {d.family} law is not on the grid of step {step}")


@dataclass(frozen=True)
class GridMatrixFunction:
    """Matrix-valued function of time sampled at the nodes of a uniform grid."""

    step: float
    values: np.ndarray  # shape (n + 1, ...)

    def __post_init__(self):
        if len(self.values) < 1:
            raise GridError("a grid function needs at least the value at t=0")

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.step

    @property
    def grid(self) -> Grid:
        return Grid(self.step, (len(self.values) - 1) * self.step)

    def at(self, t: float) -> np.ndarray:
        return self.values[self.grid.index(t)]


def cumulative_trapezoid(right: np.ndarray, left: np.ndarray, step: float) -> np.ndarray:
    """Cumulative trapezoid integral with one-sided node values.

    ``right[n]`` is the integrand's right limit at node ``n`` and ``left[n]``
    its left limit; panel ``[t_n, t_{n+1}]`` uses ``right[n]`` and
    ``left[n+1]`` so jumps sitting on nodes are integrated exactly.
    """
    out = np.zeros_like(right)
    if len(right) > 1:
        panels = 0.5 * step * (right[:-1] + left[1:])
        out[1:] = np.cumsum(panels, axis=0)
    return out


def trapezoid(right: np.ndarray, left: np.ndarray, step: float):
    if len(right) < 2:
        return np.zeros_like(right[0])
    return 0.5 * step * np.sum(right[:-1] + left[1:], axis=0)
