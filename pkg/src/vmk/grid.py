"""Uniform time grids on [0, T].

A grid with ``n`` cells has nodes ``0 = t_0 < ... < t_n = T`` and constant
step ``dt = T/n``.  Grid functions are sampled at the left endpoints
``t_0, ..., t_{n-1}``; integrals over [0, T] use the left rectangle rule
unless an operation documents otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, InvalidArgumentError


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n: int

    @property
    def dt(self) -> float:
        return self.horizon / self.n

    @property
    def nodes(self) -> np.ndarray:
        """All n+1 nodes including the terminal time."""
        return np.linspace(0.0, self.horizon, self.n + 1)

    @property
    def left_nodes(self) -> np.ndarray:
        """The n sample points of grid functions."""
        return self.nodes[:-1]

    def index_of(self, t: float) -> int:
        """Index of the node closest to t; raises if t is not a node."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n or abs(t - k * self.dt) > 1e-9 * max(1.0, self.horizon):
            raise InvalidArgumentError(f"time {t!r} is not a node of the grid")
        return k


def make_grid(horizon: float, n: int) -> TimeGrid:
    """Build a uniform grid on [0, horizon] with n cells.

    Parameters
    ----------
    horizon : float
        Terminal time T, strictly positive.
    n : int
        Number of cells, at least 2.
    """
    if not np.isfinite(horizon) or horizon <= 0.0:
        raise InvalidArgumentError(f"horizon must be positive and finite, got {horizon!r}")
    if n < 2:
        raise InvalidArgumentError(f"grid needs at least 2 cells, got {n}")
    return TimeGrid(float(horizon), int(n))


def check_same_grid(a: TimeGrid, b: TimeGrid) -> None:
    if a.n != b.n or not np.isclose(a.horizon, b.horizon, rtol=1e-12, atol=0.0):
        raise GridMismatchError(
            f"grids differ: (T={a.horizon}, n={a.n}) vs (T={b.horizon}, n={b.n})"
        )
