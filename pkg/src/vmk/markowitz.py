"""Mean-variance verification layer.

Maps the scalar summary Gamma_0 of a market (together with the riskless
rate path) to the optimal target multiplier, the minimal variance and the
efficient frontier.  Everything here is model agnostic: the stochastic
volatility modules only need to hand over Gamma_0 and the rate.
"""

from dataclasses import dataclass
from typing import Iterable, List

import numpy as np

from .errors import DegenerateMarketError, InvalidArgumentError
from .grid import TimeGrid

DEGENERACY_TOL = 1e-12


def rate_nodes(rate, grid: TimeGrid) -> np.ndarray:
    """Rate samples at all n+1 nodes from a scalar, array or callable."""
    t = grid.nodes
    if callable(rate):
        vals = np.array([float(rate(x)) for x in t])
    else:
        arr = np.asarray(rate, dtype=float)
        if arr.ndim == 0:
            vals = np.full(grid.n + 1, float(arr))
        elif arr.shape == (grid.n + 1,):
            vals = arr.copy()
        else:
            raise InvalidArgumentError(
                f"rate must be scalar, callable or shape ({grid.n + 1},), got {arr.shape}"
            )
    if not np.all(np.isfinite(vals)):
        raise InvalidArgumentError("rate path contains non-finite values")
    return vals


def integrated_rate(rate, grid: TimeGrid) -> float:
    """Trapezoid value of int_0^T r(s) ds."""
    return float(np.trapezoid(rate_nodes(rate, grid), dx=grid.dt))


def tail_rate_integrals(rate, grid: TimeGrid) -> np.ndarray:
    """Trapezoid values of int_{t_k}^T r(s) ds for every node k."""
    r = rate_nodes(rate, grid)
    seg = 0.5 * grid.dt * (r[:-1] + r[1:])
    out = np.zeros(grid.n + 1)
    out[:-1] = np.cumsum(seg[::-1])[::-1]
    return out


def a_of_p(p: float, c_matrix, norm: str = "frobenius") -> float:
    """Moment exponent a(p) = max[p(3 + |C|), 3(8p^2 - 2p)(1 + |C|^2)].

    |C| is the Frobenius norm of the correlation loading matrix by
    default; norm="squared-frobenius" reads |C| as trace(C^T C) instead.
    Requires p > 2.
    """
    if p <= 2.0:
        raise InvalidArgumentError(f"the exponent p must exceed 2, got {p}")
    c = np.atleast_2d(np.asarray(c_matrix, dtype=float))
    fro = float(np.linalg.norm(c, "fro"))
    if norm == "frobenius":
        cn = fro
    elif norm == "squared-frobenius":
        cn = fro * fro
    else:
        raise InvalidArgumentError(f"unknown norm reading {norm!r}")
    return float(max(p * (3.0 + cn), 3.0 * (8.0 * p * p - 2.0 * p) * (1.0 + cn * cn)))


def _check_gamma0(gamma0: float, int_r: float) -> float:
    if not np.isfinite(gamma0) or gamma0 <= 0.0:
        raise InvalidArgumentError(f"Gamma_0 must be positive and finite, got {gamma0}")
    disc = 1.0 - gamma0 * np.exp(-2.0 * int_r)
    if disc < DEGENERACY_TOL:
        raise DegenerateMarketError(
            f"market degenerates: 1 - Gamma_0 e^(-2 int r) = {disc:.3e} is not positive"
        )
    return disc


def xi_star(gamma0: float, x0: float, m: float, int_r: float = 0.0) -> float:
    """Optimal Lagrange target xi* = (m - Gamma_0 e^(-int r) x_0) / (1 - Gamma_0 e^(-2 int r))."""
    disc = _check_gamma0(gamma0, int_r)
    return float((m - gamma0 * np.exp(-int_r) * x0) / disc)


def value_v(gamma0: float, x0: float, m: float, int_r: float = 0.0) -> float:
    """Minimal terminal variance V(m) = Gamma_0 |x_0 - m e^(-int r)|^2 / (1 - Gamma_0 e^(-2 int r))."""
    disc = _check_gamma0(gamma0, int_r)
    dev = x0 - m * np.exp(-int_r)
    return float(gamma0 * dev * dev / disc)


@dataclass(frozen=True)
class FrontierPoint:
    m: float
    std: float
    variance: float
    xi_star: float
    gamma0: float


def frontier(gamma0: float, x0: float, m_values: Iterable[float], int_r: float = 0.0) -> List[FrontierPoint]:
    """Efficient frontier rows (m, std, variance, xi*, Gamma_0) for given targets."""
    out = []
    for m in m_values:
        v = value_v(gamma0, x0, float(m), int_r)
        out.append(
            FrontierPoint(
                m=float(m),
                std=float(np.sqrt(max(v, 0.0))),
                variance=v,
                xi_star=xi_star(gamma0, x0, float(m), int_r),
                gamma0=float(gamma0),
            )
        )
    return out
