"""Matrix-valued integration kernels K(t, s) on [0, T]^2.

Every kernel knows how to evaluate itself pointwise and how to integrate
itself exactly over grid cells in either argument.  Discretizations built
from these cell integrals therefore carry no quadrature error beyond the
piecewise-constant approximation of the co-factor.

Convolution kernels (fractional, exponential, constant Volterra ones and
diagonals of those) additionally expose exact integrals over lag cells,
which is what banded fast paths consume.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import gamma as _gamma_fn

from .errors import InvalidArgumentError
from .grid import TimeGrid


class Kernel:
    """Abstract base.  Subclasses provide dim, volterra and the integrals."""

    dim = 1
    volterra = True
    is_convolution = False

    def eval_at(self, t: float, s: float) -> np.ndarray:
        raise NotImplementedError

    def cell_integral(self, t: float, a: float, b: float) -> np.ndarray:
        """Exact integral of s -> K(t, s) over [a, b]."""
        raise NotImplementedError

    def cell_integral_first(self, a: float, b: float, s: float) -> np.ndarray:
        """Exact integral of u -> K(u, s) over [a, b]."""
        raise NotImplementedError

    def lag_integral(self, a: float, b: float) -> np.ndarray:
        """Convolution kernels only: integral of the lag profile over [a, b]."""
        raise NotImplementedError


class _ConvolutionScalar(Kernel):
    """Scalar convolution kernel K(t, s) = kappa(t - s) 1_{s <= t}."""

    is_convolution = True

    def _primitive(self, x: float) -> float:
        """Antiderivative of kappa with value 0 at lag 0."""
        raise NotImplementedError

    def _profile(self, x: float) -> float:
        """kappa(x) for x >= 0."""
        raise NotImplementedError

    def eval_at(self, t, s):
        if s > t:
            return np.zeros((1, 1))
        return np.array([[self._profile(t - s)]])

    def lag_integral(self, a, b):
        if a < 0 or b < a:
            raise InvalidArgumentError(f"lag interval [{a}, {b}] is not ordered in [0, inf)")
        return np.array([[self._primitive(b) - self._primitive(a)]])

    def cell_integral(self, t, a, b):
        if b < a:
            raise InvalidArgumentError(f"cell [{a}, {b}] is not ordered")
        lo = max(t - b, 0.0)
        hi = max(t - a, 0.0)
        return np.array([[self._primitive(hi) - self._primitive(lo)]])

    def cell_integral_first(self, a, b, s):
        if b < a:
            raise InvalidArgumentError(f"cell [{a}, {b}] is not ordered")
        lo = max(a - s, 0.0)
        hi = max(b - s, 0.0)
        return np.array([[self._primitive(hi) - self._primitive(lo)]])


@dataclass(frozen=True)
class FractionalKernel(_ConvolutionScalar):
    """K(t, s) = scale * (t-s)^{h-1/2} / Gamma(h+1/2) for s <= t.

    h in (0, 1].  For h < 1/2 the kernel is singular on the diagonal but
    stays square integrable; pointwise evaluation at t == s is refused
    while cell integrals remain finite.
    """

    h: float
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.h <= 1.0:
            raise InvalidArgumentError(f"fractional exponent h must lie in (0, 1], got {self.h}")

    def _norm(self) -> float:
        return self.scale / _gamma_fn(self.h + 0.5)

    def _profile(self, x):
        if x == 0.0:
            if self.h < 0.5:
                raise InvalidArgumentError(
                    "fractional kernel with h < 1/2 is singular at zero lag; "
                    "use cell integrals instead of pointwise evaluation"
                )
            return self._norm() if self.h == 0.5 else 0.0
        return self._norm() * x ** (self.h - 0.5)

    def _primitive(self, x):
        p = self.h + 0.5
        return self._norm() * x ** p / p


@dataclass(frozen=True)
class ExponentialKernel(_ConvolutionScalar):
    """K(t, s) = scale * exp(-beta (t-s)) for s <= t, beta >= 0."""

    beta: float
    scale: float = 1.0

    def __post_init__(self):
        if self.beta < 0.0:
            raise InvalidArgumentError(f"decay rate beta must be nonnegative, got {self.beta}")

    def _profile(self, x):
        return self.scale * np.exp(-self.beta * x)

    def _primitive(self, x):
        if self.beta == 0.0:
            return self.scale * x
        return self.scale * (1.0 - np.exp(-self.beta * x)) / self.beta


@dataclass(frozen=True)
class ConstantKernel(Kernel):
    """K(t, s) = M, optionally restricted to s <= t (Volterra)."""

    matrix: np.ndarray
    volterra: bool = True

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise InvalidArgumentError(f"constant kernel matrix must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dim", m.shape[0])
        object.__setattr__(self, "is_convolution", bool(self.volterra))

    def eval_at(self, t, s):
        if self.volterra and s > t:
            return np.zeros_like(self.matrix)
        return self.matrix.copy()

    def lag_integral(self, a, b):
        if a < 0 or b < a:
            raise InvalidArgumentError(f"lag interval [{a}, {b}] is not ordered in [0, inf)")
        return self.matrix * (b - a)

    def cell_integral(self, t, a, b):
        if b < a:
            raise InvalidArgumentError(f"cell [{a}, {b}] is not ordered")
        hi = min(b, t) if self.volterra else b
        return self.matrix * max(hi - a, 0.0)

    def cell_integral_first(self, a, b, s):
        if b < a:
            raise InvalidArgumentError(f"cell [{a}, {b}] is not ordered")
        lo = max(a, s) if self.volterra else a
        return self.matrix * max(b - lo, 0.0)


@dataclass(frozen=True)
class DiagonalKernel(Kernel):
    """Diagonal matrix kernel built from scalar component kernels."""

    components: Tuple[Kernel, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidArgumentError("diagonal kernel needs at least one component")
        for c in comps:
            if c.dim != 1:
                raise InvalidArgumentError("diagonal kernel components must be scalar kernels")
            if not c.volterra:
                raise InvalidArgumentError("diagonal kernel components must be Volterra kernels")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "dim", len(comps))
        object.__setattr__(self, "is_convolution", all(c.is_convolution for c in comps))

    def _assemble(self, parts):
        out = np.zeros((self.dim, self.dim))
        for i, p in enumerate(parts):
            out[i, i] = p[0, 0]
        return out

    def eval_at(self, t, s):
        return self._assemble([c.eval_at(t, s) for c in self.components])

    def lag_integral(self, a, b):
        return self._assemble([c.lag_integral(a, b) for c in self.components])

    def cell_integral(self, t, a, b):
        return self._assemble([c.cell_integral(t, a, b) for c in self.components])

    def cell_integral_first(self, a, b, s):
        return self._assemble([c.cell_integral_first(a, b, s) for c in self.components])


@dataclass(frozen=True)
class TableKernel(Kernel):
    """Kernel given by cell-averaged values on a fixed grid.

    values[i, j] is the average of K(t_i, s) over the j-th cell; the kernel
    is treated as piecewise constant in both arguments.
    """

    grid: TimeGrid
    values: np.ndarray
    volterra: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.grid.n
        if v.ndim == 2:
            v = v[:, :, None, None]
        if v.shape[0] != n or v.shape[1] != n or v.shape[2] != v.shape[3]:
            raise InvalidArgumentError(
                f"table values must have shape (n, n) or (n, n, N, N) with n={n}, got {v.shape}"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dim", v.shape[2])

    def _t_index(self, t):
        return min(int(np.floor(t / self.grid.dt + 1e-12)), self.grid.n - 1)

    def eval_at(self, t, s):
        if self.volterra and s > t:
            return np.zeros((self.dim, self.dim))
        return self.values[self._t_index(t), self._t_index(s)].copy()

    def cell_integral(self, t, a, b):
        if b < a:
            raise InvalidArgumentError(f"cell [{a}, {b}] is not ordered")
        dt = self.grid.dt
        i = self._t_index(t)
        out = np.zeros((self.dim, self.dim))
        j0 = max(int(np.floor(a / dt + 1e-12)), 0)
        j1 = min(int(np.ceil(b / dt - 1e-12)), self.grid.n)
        for j in range(j0, j1):
            lo, hi = max(a, j * dt), min(b, (j + 1) * dt)
            if self.volterra:
                hi = min(hi, t)
            if hi > lo:
                out += self.values[i, j] * (hi - lo)
        return out

    def cell_integral_first(self, a, b, s):
        if b < a:
            raise InvalidArgumentError(f"cell [{a}, {b}] is not ordered")
        dt = self.grid.dt
        j = self._t_index(s)
        out = np.zeros((self.dim, self.dim))
        i0 = max(int(np.floor(a / dt + 1e-12)), 0)
        i1 = min(int(np.ceil(b / dt - 1e-12)), self.grid.n)
        for i in range(i0, i1):
            lo, hi = max(a, i * dt), min(b, (i + 1) * dt)
            if self.volterra:
                lo = max(lo, s)
            if hi > lo:
                out += self.values[i, j] * (hi - lo)
        return out


def kernel_eval(kernel: Kernel, t: float, s: float) -> np.ndarray:
    """Pointwise K(t, s).  Refuses singular diagonal points."""
    return kernel.eval_at(t, s)


def kernel_cell_integral(kernel: Kernel, t: float, a: float, b: float) -> np.ndarray:
    """Exact integral of s -> K(t, s) over the cell [a, b]."""
    if b < a:
        raise InvalidArgumentError(f"cell [{a}, {b}] is not ordered")
    return kernel.cell_integral(t, a, b)


def band_coefficients(kernel: Kernel, grid: TimeGrid) -> np.ndarray:
    """Exact lag-cell integrals c[m] = int_{m dt}^{(m+1) dt} kappa, shape (n, N, N)."""
    if not kernel.is_convolution:
        raise InvalidArgumentError("band coefficients are only defined for convolution kernels")
    n, dt, N = grid.n, grid.dt, kernel.dim
    out = np.empty((n, N, N))
    for m in range(n):
        out[m] = kernel.lag_integral(m * dt, (m + 1) * dt)
    return out


def folded_cells(kernel: Kernel, grid: TimeGrid) -> np.ndarray:
    """Cell-integral matrix folded to shape (N n, N n).

    Block (i, j) equals the integral of s -> K(t_i, s) over cell j, so a
    matrix-vector product against stacked samples is the left-rule value
    of the integral operator at the sample nodes.
    """
    n, N = grid.n, kernel.dim
    a4 = np.zeros((n, N, n, N))
    if kernel.is_convolution:
        c = band_coefficients(kernel, grid)
        for m in range(n - 1):
            i = np.arange(m + 1, n)
            a4[i, :, i - m - 1, :] = c[m]
    elif isinstance(kernel, ConstantKernel) and not kernel.volterra:
        a4[:, :, :, :] = (grid.dt * kernel.matrix)[None, :, None, :]
    elif isinstance(kernel, TableKernel):
        from .grid import check_same_grid

        check_same_grid(kernel.grid, grid)
        v = kernel.values * grid.dt
        if kernel.volterra:
            for i in range(n):
                a4[i, :, :i, :] = v[i, :i].transpose(1, 0, 2)
        else:
            a4[:] = v.transpose(0, 2, 1, 3)
    else:
        nodes = grid.nodes
        for i in range(n):
            for j in range(n):
                a4[i, :, j, :] = kernel.cell_integral(nodes[i], nodes[j], nodes[j + 1])
    return a4.reshape(n * N, n * N)


def first_arg_columns(kernel: Kernel, grid: TimeGrid, k: int, band=None) -> np.ndarray:
    """Columns of cell integrals in the first argument at source node t_k.

    Row block i holds the integral of u -> K(u, t_k) over cell i, which is
    nonzero for i >= k on Volterra kernels.  Shape (N n, N).
    """
    n, N, dt = grid.n, kernel.dim, grid.dt
    out = np.zeros((n, N, N))
    if kernel.is_convolution:
        c = band_coefficients(kernel, grid) if band is None else band
        out[k:] = c[: n - k]
    else:
        tk = grid.nodes[k]
        for i in range(n):
            out[i] = kernel.cell_integral_first(grid.nodes[i], grid.nodes[i + 1], tk)
    return out.reshape(n * N, N)


def kernel_l2_norm_sq(kernel: Kernel, grid: TimeGrid) -> float:
    """Grid approximation of the squared L2([0,T]^2) norm of K.

    Equals the squared Frobenius norm of the folded cell matrix, i.e. the
    double integral of the squared cell-averaged kernel.  The error decays
    like n^{-min(1, 2h)} for fractional kernels and is one-sided from below
    for kernels whose profile is convex in the lag.
    """
    a = folded_cells(kernel, grid)
    return float(np.sum(a * a))


def kernel_sup_row_l2(kernel: Kernel, grid: TimeGrid) -> float:
    """Grid approximation of sup_t int_0^T |K(t, s)|_F^2 ds."""
    n, N = grid.n, kernel.dim
    a = folded_cells(kernel, grid).reshape(n, N, n, N)
    row_sq = np.einsum("iajb,iajb->i", a, a) / grid.dt
    return float(np.max(row_sq))
