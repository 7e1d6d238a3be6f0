"""Monte Carlo validation layer.

Drivers are generated per path from a counter-based generator keyed by
(seed, global path index), so results are bit-for-bit reproducible and
independent of chunking.  Wealth under the optimal feedback control is
advanced with the exact exponential step of the induced geometric
dynamics of the discounted gap, so no additional discretization error
enters beyond the premium evaluation itself.
"""

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .errors import InvalidArgumentError
from .grid import TimeGrid
from .markowitz import rate_nodes, tail_rate_integrals


def simulate_drivers(grid: TimeGrid, n_factors: int, paths: int, seed: int,
                     antithetic: bool = False, start: int = 0) -> np.ndarray:
    """Brownian increments of shape (paths, n, n_factors), step variance dt.

    Path p draws from its own Philox stream keyed by (seed, start + p);
    with ``antithetic`` consecutive global indices share a stream and the
    odd one is negated, so estimators stay chunk-invariant either way.
    """
    if paths < 1 or n_factors < 1:
        raise InvalidArgumentError("paths and n_factors must be positive")
    out = np.empty((paths, grid.n, n_factors))
    root = math.sqrt(grid.dt)
    for p in range(paths):
        idx = start + p
        stream = idx // 2 if antithetic else idx
        gen = np.random.Generator(np.random.Philox(key=[seed, stream]))
        z = gen.standard_normal((grid.n, n_factors))
        if antithetic and idx % 2 == 1:
            z = -z
        out[p] = root * z
    return out


@dataclass(frozen=True)
class SampleStats:
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    paths: int


def mc_stats(samples: np.ndarray) -> SampleStats:
    """Mean and unbiased variance with standard errors for both.

    The standard error of the variance uses the fourth central moment,
    Var(s^2) = (mu4 - sigma^4 (n-3)/(n-1)) / n.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise InvalidArgumentError("need at least two samples")
    mean = math.fsum(x) / n
    c = x - mean
    m2 = math.fsum(c * c) / n
    m4 = math.fsum(c**4) / n
    var = m2 * n / (n - 1)
    se_mean = math.sqrt(max(var, 0.0) / n)
    var_of_var = (m4 - (var**2) * (n - 3) / (n - 1)) / n
    return SampleStats(mean, var, se_mean, math.sqrt(max(var_of_var, 0.0)), n)


def simulate_wealth(grid: TimeGrid, rate, x0: float, xi_star_val: float,
                    db: np.ndarray, lam: np.ndarray, prem: np.ndarray) -> SimpleNamespace:
    """Wealth paths under the optimal feedback control.

    The discounted gap Xg_t = X_t - xi* e^{-int_t^T r} follows a
    path-dependent geometric dynamics with drift r + lambda'A and
    exposure A = -premium per unit gap, advanced exactly:

        Xg_{k+1} = Xg_k exp((r_k + lambda_k'A_k - |A_k|^2/2) dt + A_k'dB_k).

    Returns x (paths, n+1), gap, and the invested amounts alpha
    (paths, n, d) with alpha_k = A_k Xg_k.
    """
    P, n, d = db.shape
    if lam.shape != (P, n, d) or prem.shape != (P, n, d):
        raise InvalidArgumentError("db, lam and prem must share a common shape")
    if n != grid.n:
        raise InvalidArgumentError(f"paths built for {n} steps, grid has {grid.n}")
    rn = rate_nodes(rate, grid)
    tails = tail_rate_integrals(rate, grid)
    dt = grid.dt
    gap = np.empty((P, n + 1))
    gap[:, 0] = x0 - xi_star_val * math.exp(-tails[0])
    alpha = np.empty((P, n, d))
    for k in range(n):
        a = -prem[:, k, :]
        alpha[:, k, :] = a * gap[:, k][:, None]
        drift = (rn[k] + np.einsum("pd,pd->p", lam[:, k, :], a) - 0.5 * np.einsum("pd,pd->p", a, a)) * dt
        shock = np.einsum("pd,pd->p", a, db[:, k, :])
        gap[:, k + 1] = gap[:, k] * np.exp(drift + shock)
    x = gap + xi_star_val * np.exp(-tails)[None, :]
    return SimpleNamespace(x=x, gap=gap, alpha=alpha, terminal=x[:, n])


def gamma_factors(grid: TimeGrid, rate, prem: np.ndarray) -> np.ndarray:
    """Per-path samples exp(int (2r - |premium|^2)); their mean estimates Gamma_0."""
    rn = rate_nodes(rate, grid)
    expo = grid.dt * (2.0 * np.sum(rn[: grid.n]) - np.einsum("pkd,pkd->p", prem, prem))
    return np.exp(expo)


def run_mc(evaluator, paths: int, seed: int, x0: float, xi_star_val: float,
           antithetic: bool = False, chunk: int = 4096, keep_paths: int = 0) -> SimpleNamespace:
    """Stream the full pipeline and collect terminal-wealth and Gamma samples.

    ``evaluator`` provides n_factors and premium_paths(z) -> (dB, lambda,
    premium, state paths); chunking does not change any draw.  The first
    ``keep_paths`` paths are returned in full (wealth, amounts, state) for
    dumping.
    """
    grid = evaluator.grid
    rate = evaluator.model.rate
    terminal = np.empty(paths)
    gamma = np.empty(paths)
    kept = None
    done = 0
    while done < paths:
        m = min(chunk, paths - done)
        z = simulate_drivers(grid, evaluator.n_factors, m, seed, antithetic=antithetic, start=done)
        db, lam, prem, state = evaluator.premium_paths(z)
        w = simulate_wealth(grid, rate, x0, xi_star_val, db, lam, prem)
        terminal[done : done + m] = w.terminal
        gamma[done : done + m] = gamma_factors(grid, rate, prem)
        if keep_paths > done:
            take = min(keep_paths, done + m) - done
            piece = SimpleNamespace(x=w.x[:take], alpha=w.alpha[:take], state=state[:take])
            kept = piece if kept is None else SimpleNamespace(
                x=np.concatenate([kept.x, piece.x]),
                alpha=np.concatenate([kept.alpha, piece.alpha]),
                state=np.concatenate([kept.state, piece.state]),
            )
        done += m
    return SimpleNamespace(
        wealth=mc_stats(terminal),
        gamma=mc_stats(gamma),
        terminal=terminal,
        gamma_samples=gamma,
        kept=kept,
    )
