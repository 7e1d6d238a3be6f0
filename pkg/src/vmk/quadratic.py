"""Multivariate quadratic Volterra stochastic volatility.

The state is a Gaussian Volterra Ornstein-Uhlenbeck process

    Y_t = g_0(t) + int_0^t K(t,s)[D Y_s ds + eta dW_s],

with an N x N Volterra kernel K, drift matrix D, vol-of-vol eta and a
driver W whose components are correlated with the d stock Brownians B
through rows C_k of the correlation matrix, W^k = C_k.B + sqrt(1-|C_k|^2)
B_perp^k.  The market price of risk is linear, lambda_t = Theta Y_t, so
squared risk premia are quadratic in the state.

The exponential functional needed by the mean-variance solution is

    Gamma_t = exp(phi_t + <g_t, Psi_t g_t>),

where Psi_t is a family of symmetric nonpositive integral operators on
L^2([t,T]) available in closed form,

    Psi_t = -(Id - Khat)^{-*} Theta'(Id + 2 Theta SigTilde_t Theta')^{-1}
            Theta (Id - Khat)^{-1},

with Khat the kernel operator K(D - 2 eta C Theta) and SigTilde_t a
deflated covariance operator.  Everything here is assembled from the cell
discretization of the kernel, so a single dense solve per node gives
Psi_t exactly at the discrete level.
"""

import math
import warnings
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import (
    InternalConsistencyError,
    InvalidArgumentError,
    MemoryCapError,
    ModelAssumptionError,
    RiccatiBlowUpError,
    SingularVolatilityError,
)
from .grid import TimeGrid
from .kernels import Kernel, band_coefficients, first_arg_columns, folded_cells, kernel_l2_norm_sq
from .markowitz import rate_nodes, tail_rate_integrals
from .operators import IntegralOperator, _bd_left, _bd_right, kernel_operator, resolvent

PSD_TOL = 1e-10
RCOND_MIN = 1e-12
ODE_CAP = 1e6
COVARIANCE_DIM_CAP = 2400


@dataclass(frozen=True)
class QuadraticModel:
    kernel: Kernel
    theta: np.ndarray
    eta: np.ndarray
    corr: np.ndarray
    drift: Optional[np.ndarray] = None
    g0: object = 0.0
    rate: object = 0.0
    x0: float = 1.0
    loadings: Optional[np.ndarray] = None
    enforce_psd: bool = True

    def __post_init__(self):
        if not self.kernel.volterra:
            raise InvalidArgumentError("state kernel must be of Volterra type")
        N = self.kernel.dim
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        d = theta.shape[0]
        if theta.shape != (d, N):
            raise InvalidArgumentError(f"theta must be (d, {N}), got {theta.shape}")
        eta = np.atleast_2d(np.asarray(self.eta, dtype=float))
        if eta.shape != (N, N):
            raise InvalidArgumentError(f"eta must be ({N}, {N}), got {eta.shape}")
        corr = np.atleast_2d(np.asarray(self.corr, dtype=float))
        if corr.shape != (N, d):
            raise InvalidArgumentError(f"corr must be ({N}, {d}), got {corr.shape}")
        row_sq = np.sum(corr * corr, axis=1)
        if np.any(row_sq > 1.0 + 1e-12):
            raise ModelAssumptionError(
                f"correlation rows must satisfy |C_k| <= 1; worst |C_k|^2 = {row_sq.max():.6g}"
            )
        drift = self.drift
        drift = np.zeros((N, N)) if drift is None else np.atleast_2d(np.asarray(drift, dtype=float))
        if drift.shape != (N, N):
            raise InvalidArgumentError(f"drift must be ({N}, {N}), got {drift.shape}")
        loadings = self.loadings
        if loadings is not None:
            loadings = np.asarray(loadings, dtype=float)
            if loadings.shape != (d, d, N):
                raise InvalidArgumentError(f"loadings must be ({d}, {d}, {N}), got {loadings.shape}")
        cct = corr @ corr.T
        u_mat = cct - np.diag(np.diag(cct)) + np.eye(N)
        m0 = u_mat - 2.0 * cct
        min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (m0 + m0.T))))
        psd_violated = min_eig < -PSD_TOL
        if psd_violated and self.enforce_psd:
            raise ModelAssumptionError(
                "driver covariance deflated by leverage (U - 2 C C') is not positive "
                f"semidefinite (min eigenvalue {min_eig:.6g}); pass enforce_psd=False "
                "to proceed at your own risk",
                eigenvalue=min_eig,
            )
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "corr", corr)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "u_mat", u_mat)
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "m0_min_eig", min_eig)
        object.__setattr__(self, "psd_violated", psd_violated)

    @property
    def n_state(self) -> int:
        return self.kernel.dim

    @property
    def n_assets(self) -> int:
        return self.theta.shape[0]

    @property
    def f_mat(self) -> np.ndarray:
        """Effective drift D - 2 eta C Theta entering the deflating kernel."""
        return self.drift - 2.0 * self.eta @ self.corr @ self.theta


def g0_nodes_quadratic(model: QuadraticModel, grid: TimeGrid) -> np.ndarray:
    """Initial curve sampled at all n+1 nodes, shape (n+1, N)."""
    N = model.n_state
    g0 = model.g0
    if callable(g0):
        out = np.array([np.broadcast_to(np.asarray(g0(x), dtype=float), (N,)) for x in grid.nodes])
    else:
        arr = np.asarray(g0, dtype=float)
        if arr.ndim == 0:
            out = np.full((grid.n + 1, N), float(arr))
        elif arr.shape == (N,):
            out = np.tile(arr, (grid.n + 1, 1))
        elif arr.shape == (grid.n + 1, N):
            out = arr.copy()
        else:
            raise InvalidArgumentError(
                f"g0 must be scalar, callable, shape ({N},) or ({grid.n + 1}, {N}); got {arr.shape}"
            )
    return out


def _discretize(model: QuadraticModel, grid: TimeGrid) -> SimpleNamespace:
    """Shared dense factors: folded kernel, deflation inverse, premium maps."""
    n, N = grid.n, model.n_state
    band = band_coefficients(model.kernel, grid)
    a = folded_cells(model.kernel, grid)
    khat = _bd_right(a, model.f_mat, n)
    ir = scipy.linalg.solve_triangular(
        np.eye(n * N) - khat, np.eye(n * N), lower=True, unit_diagonal=True, check_finite=False
    )
    aeta = _bd_right(a, model.eta, n)
    m1 = _bd_left(model.theta, ir, n)
    qf = _bd_left(model.theta, ir @ aeta, n)
    return SimpleNamespace(band=band, a=a, khat=khat, ir=ir, aeta=aeta, m1=m1, qf=qf)


def _factor_deflating(w: np.ndarray, t: float, rcond_min: float):
    """Cholesky-factor the symmetric deflating matrix W.

    W must stay positive definite for the Riccati solution to exist up to
    the horizon; a failed factorization (or a reciprocal condition below
    ``rcond_min``) is how finite-time blow-up manifests on the grid.
    Returns (factor, rcond).
    """
    if not np.all(np.isfinite(w)):
        raise RiccatiBlowUpError(
            f"deflating matrix lost finiteness at t={t:.6g}", time=float(t)
        )
    anorm = float(np.abs(w).sum(axis=0).max())
    try:
        cf = scipy.linalg.cho_factor(w, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise RiccatiBlowUpError(
            "operator Riccati solution blows up: deflating matrix loses positive "
            f"definiteness at t={t:.6g}",
            time=float(t),
        ) from exc
    pocon = scipy.linalg.get_lapack_funcs("pocon", (cf[0],))
    rcond, info = pocon(cf[0], anorm, uplo="L")
    rcond = 0.0 if info != 0 else float(rcond)
    if rcond < rcond_min:
        raise RiccatiBlowUpError(
            "operator Riccati solution blows up: deflating matrix is numerically "
            f"singular at t={t:.6g} (rcond {rcond:.3e})",
            time=float(t),
        )
    return cf, rcond


def _cveta_columns(model: QuadraticModel, grid: TimeGrid, k: int, band: np.ndarray) -> np.ndarray:
    """Columns of s -> K(s, t_k) eta cell integrals, shape (N n, N)."""
    n, N = grid.n, model.n_state
    cv = first_arg_columns(model.kernel, grid, k, band=band).reshape(n, N, N)
    return (cv @ model.eta).reshape(n * N, N)


class QuadraticSolution:
    """Per-node operator Riccati data assembled by solve_operator_riccati.

    Attributes
    ----------
    phi, phidot : (n+1,) scalar correction and its derivative.
    p_path : (n+1, N, N) reduction <1, Psi_t 1>; in the Markovian
        specialization this is the matrix Riccati path.
    z2_maps : (n+1, N n, N) linear maps from curve samples to half the
        volatility adjustment: Z2(t_k) = 2 z2_maps[k]' g.
    z2_det, premium_profile : the adjustment and the full risk premium
        profile evaluated on the initial (deterministic) curve.
    gamma0 : closed-form Gamma_0.
    """

    def __init__(self, model, grid, phi, phidot, p_path, z2_maps, z2_det,
                 premium_profile, gamma0, quad0, min_rcond, disc, g0s):
        self.model = model
        self.grid = grid
        self.phi = phi
        self.phidot = phidot
        self.p_path = p_path
        self.z2_maps = z2_maps
        self.z2_det = z2_det
        self.premium_profile = premium_profile
        self.gamma0 = gamma0
        self.quad0 = quad0
        self.min_rcond = min_rcond
        self.disc = disc
        self.g0s = g0s


def solve_operator_riccati(model: QuadraticModel, grid: TimeGrid, rcond_min: float = RCOND_MIN) -> QuadraticSolution:
    """Evaluate the closed-form operator Riccati solution at every node.

    For each node t_k the deflating matrix W_k = Id + 2 Theta SigTilde_k
    Theta' is factorized once and the action of Psi_k is taken on the
    columns needed downstream: the kernel columns K(., t_k) eta (giving
    the volatility adjustment Z2 and the phi integrand), the constant
    function (giving the Markovian reduction P), and the initial curve.

    Raises
    ------
    RiccatiBlowUpError
        When W_k loses positive definiteness or becomes numerically
        singular (reciprocal condition below ``rcond_min``), which is how
        finite-time blow-up of the Riccati solution manifests on the
        grid; carries the first failing time scanning backwards from the
        horizon.
    """
    n, N, d = grid.n, model.n_state, model.n_assets
    dt = grid.dt
    disc = _discretize(model, grid)
    rn = rate_nodes(model.rate, grid)
    g0s = g0_nodes_quadratic(model, grid)
    g0_samples = g0s[:n].reshape(n * N)
    eye_dn = np.eye(d * n)
    ws = np.zeros((d * n, d * n))
    phidot = np.zeros(n + 1)
    p_path = np.zeros((n + 1, N, N))
    z2_maps = np.zeros((n + 1, n * N, N))
    z2_det = np.zeros((n + 1, N))
    premium_profile = np.zeros((n + 1, d))
    quad0 = 0.0
    min_rcond = np.inf
    for k in range(n, -1, -1):
        if k < n:
            q = disc.qf[:, k * N : (k + 1) * N]
            ws += (q @ model.m0) @ q.T
        w = eye_dn + ws + ws.T
        cf, rcond = _factor_deflating(w, float(grid.nodes[k]), rcond_min)
        min_rcond = min(min_rcond, rcond)
        cveta = _cveta_columns(model, grid, k, disc.band)
        ones = np.zeros((n, N, N))
        ones[k:] = np.eye(N)
        rhs = np.concatenate([cveta, ones.reshape(n * N, N)], axis=1)
        if k == 0:
            rhs = np.concatenate([rhs, g0_samples[:, None]], axis=1)
        act = -disc.m1.T @ scipy.linalg.cho_solve(cf, disc.m1 @ rhs, check_finite=False)
        act[: k * N] = 0.0
        act_cv = act[:, :N]
        act_ones = act[:, N : 2 * N]
        z2_maps[k] = act_cv
        p_path[k] = dt * act_ones.reshape(n, N, N).sum(axis=0)
        phidot[k] = -(1.0 / dt) * float(np.trace((cveta.T @ act_cv) @ model.u_mat)) - 2.0 * rn[k]
        z2_det[k] = 2.0 * act_cv.T @ g0_samples
        premium_profile[k] = model.theta @ g0s[k] + model.corr.T @ z2_det[k]
        if k == 0:
            quad0 = dt * float(g0_samples @ act[:, 2 * N])
    phi = np.zeros(n + 1)
    for k in range(n - 1, -1, -1):
        phi[k] = phi[k + 1] - 0.5 * dt * (phidot[k] + phidot[k + 1])
    log_gamma0 = phi[0] + quad0
    gamma0 = float(np.exp(log_gamma0))
    hi = float(np.exp(2.0 * tail_rate_integrals(model.rate, grid)[0]))
    if gamma0 == 0.0 and log_gamma0 < -600.0:
        raise ModelAssumptionError(
            f"strategy value Gamma_0 = exp({log_gamma0:.4g}) underflows double "
            "precision; the mean-variance problem is numerically degenerate at "
            "this horizon and volatility scale"
        )
    if not np.isfinite(gamma0) or gamma0 <= 0.0 or gamma0 > hi * (1.0 + 1e-8):
        msg = (
            f"Gamma_0 = {gamma0:.6g} violates the (0, e^(2 int r)] bound "
            f"(upper {hi:.6g})"
        )
        if model.psd_violated:
            warnings.warn(msg + "; expected once the deflated covariance loses "
                          "positive semidefiniteness", RuntimeWarning, stacklevel=2)
        else:
            raise InternalConsistencyError(msg)
    return QuadraticSolution(
        model, grid, phi, phidot, p_path, z2_maps, z2_det, premium_profile,
        gamma0, quad0, min_rcond, disc, g0s,
    )


def psi_full_matrix(model: QuadraticModel, grid: TimeGrid, k: int, disc: SimpleNamespace = None,
                    restrict: bool = True) -> np.ndarray:
    """Dense folded matrix of Psi_{t_k} (identity part included), (Nn, Nn).

    With ``restrict`` (the default) rows and columns before node k are
    zeroed, so the matrix represents the operator on L^2([t_k, T])
    embedded in the full grid; without it the raw closed form is returned,
    which is meaningful on the whole grid only at k = n where the
    deflating matrix is the identity.
    """
    n, N, d = grid.n, model.n_state, model.n_assets
    if not 0 <= k <= n:
        raise InvalidArgumentError(f"node index must lie in [0, {n}]")
    disc = _discretize(model, grid) if disc is None else disc
    ws = np.zeros((d * n, d * n))
    for j in range(k, n):
        q = disc.qf[:, j * N : (j + 1) * N]
        ws += (q @ model.m0) @ q.T
    w = np.eye(d * n) + ws + ws.T
    cf, _ = _factor_deflating(w, float(grid.nodes[k]), RCOND_MIN)
    full = -disc.m1.T @ scipy.linalg.cho_solve(cf, disc.m1, check_finite=False)
    if restrict:
        full[: k * N] = 0.0
        full[:, : k * N] = 0.0
    return full


def psi_operator(model: QuadraticModel, grid: TimeGrid, k: int = 0, disc: SimpleNamespace = None) -> IntegralOperator:
    """Psi_{t_k} as an integral operator split into -Theta'Theta Id + kernel.

    The identity part is global while the operator only acts on [t_k, T];
    for k > 0 use the operator on tail samples only.
    """
    n, N = grid.n, model.n_state
    full = psi_full_matrix(model, grid, k, disc)
    gid = model.theta.T @ model.theta
    mask = np.zeros(n)
    mask[k:] = 1.0
    kern = full + np.kron(np.diag(mask), gid)
    return IntegralOperator(grid=grid, dim=N, kernel=kern, ident=-gid)


def sigma_operator(model: QuadraticModel, grid: TimeGrid, k: int = 0, disc: SimpleNamespace = None) -> IntegralOperator:
    """Deflated-state covariance operator Sigma_{t_k} as a pure kernel."""
    n, N = grid.n, model.n_state
    disc = _discretize(model, grid) if disc is None else disc
    ae = disc.aeta.copy()
    ae[:, : k * N] = 0.0
    kern = _bd_right(ae, model.m0, n) @ ae.T
    return kernel_operator(grid, N, kern)


def sigma_tilde_operator(model: QuadraticModel, grid: TimeGrid, k: int = 0, disc: SimpleNamespace = None) -> IntegralOperator:
    """(Id - Khat)^{-1} Sigma_{t_k} (Id - Khat)^{-*} as a pure kernel."""
    disc = _discretize(model, grid) if disc is None else disc
    sig = sigma_operator(model, grid, k, disc)
    return kernel_operator(grid, model.n_state, disc.ir @ sig.kernel @ disc.ir.T)


def sigma_dot_folded(model: QuadraticModel, grid: TimeGrid, k: int, band: np.ndarray = None) -> np.ndarray:
    """Folded time derivative of Sigma_t at t_k: -K(., t_k) eta M0 eta' K(., t_k)'."""
    band = band_coefficients(model.kernel, grid) if band is None else band
    cveta = _cveta_columns(model, grid, k, band)
    return -(1.0 / grid.dt) * (cveta @ model.m0) @ cveta.T


def lambda_dot_folded(model: QuadraticModel, grid: TimeGrid, k: int, band: np.ndarray = None) -> np.ndarray:
    """Folded derivative of the undeflated covariance: -K eta U eta' K'."""
    band = band_coefficients(model.kernel, grid) if band is None else band
    cveta = _cveta_columns(model, grid, k, band)
    return -(1.0 / grid.dt) * (cveta @ model.u_mat) @ cveta.T


def riccati_derivative_residual(model: QuadraticModel, grid: TimeGrid, k: int, disc: SimpleNamespace = None) -> float:
    """Relative residual of d/dt Psi_t = 2 Psi_t SigmaDot_t Psi_t at node k.

    Compares the forward difference of the dense Psi matrices with the
    quadratic right-hand side on the common tail block; decays like the
    step size under refinement.
    """
    n, N = grid.n, model.n_state
    if not 0 <= k < n:
        raise InvalidArgumentError(f"node index must lie in [0, {n - 1}]")
    disc = _discretize(model, grid) if disc is None else disc
    pk = psi_full_matrix(model, grid, k, disc)
    pk1 = psi_full_matrix(model, grid, k + 1, disc)
    rhs = 2.0 * pk @ sigma_dot_folded(model, grid, k, disc.band) @ pk
    lo = (k + 1) * N
    res = (pk1 - pk) / grid.dt - rhs
    scale = max(1.0, float(np.abs(rhs[lo:, lo:]).max()))
    return float(np.abs(res[lo:, lo:]).max()) / scale


def boundary_relation_residual(model: QuadraticModel, grid: TimeGrid, k: int, f: np.ndarray, disc: SimpleNamespace = None) -> float:
    """Residual of (Psi_t f)(t) = -Theta'Theta f(t) + (Khat^* Psi_t f)(t) at t_k."""
    n, N = grid.n, model.n_state
    disc = _discretize(model, grid) if disc is None else disc
    fa = np.asarray(f, dtype=float).reshape(n, N).copy()
    fa[:k] = 0.0
    flat = fa.reshape(n * N)
    act = psi_full_matrix(model, grid, k, disc) @ flat
    lhs = act.reshape(n, N)[k]
    cv = first_arg_columns(model.kernel, grid, k, band=disc.band)
    rhs = -(model.theta.T @ model.theta) @ fa[k] + model.f_mat.T @ (cv.T @ act)
    return float(np.max(np.abs(lhs - rhs)))


def correlate_drivers_quadratic(model: QuadraticModel, z: np.ndarray):
    """Map raw increments (P, n, d+N) to stock and state drivers (dB, dW)."""
    d, N = model.n_assets, model.n_state
    if z.shape[2] != d + N:
        raise InvalidArgumentError(f"need {d + N} driving factors, got {z.shape[2]}")
    db = z[:, :, :d]
    dperp = z[:, :, d:]
    row_sq = np.sum(model.corr * model.corr, axis=1)
    dw = db @ model.corr.T + np.sqrt(np.maximum(1.0 - row_sq, 0.0))[None, None, :] * dperp
    return db, dw


def forward_g_quadratic(model: QuadraticModel, grid: TimeGrid, dw: np.ndarray, snapshot_at=None):
    """Evolve the adjusted forward curve g_t(s) pathwise.

    dw holds state-driver increments of shape (P, n, N).  Slot k of the
    returned array accumulates exactly the increments of cells j < k, so
    the final array holds the state path Y(t_k) in slot k; a snapshot at
    node k holds the curve g_{t_k}(s) in slots s >= k.
    """
    P = dw.shape[0]
    n, N = grid.n, model.n_state
    if dw.shape != (P, n, N):
        raise InvalidArgumentError(f"dw must have shape (P, {n}, {N}), got {dw.shape}")
    band = band_coefficients(model.kernel, grid)
    dt = grid.dt
    curve = np.tile(g0_nodes_quadratic(model, grid)[None, :, :], (P, 1, 1))
    snap = None
    for j in range(n):
        if snapshot_at is not None and j == snapshot_at:
            snap = curve.copy()
        incr = curve[:, j, :] @ model.drift.T * dt + dw[:, j, :] @ model.eta.T
        curve[:, j + 1 :, :] += np.einsum("mab,pb->pma", band[: n - j], incr) / dt
    if snapshot_at is not None and snap is None:
        snap = curve.copy()
    return (curve, snap) if snapshot_at is not None else curve


def gamma_quadratic(sol: QuadraticSolution, k: int, g_rows: np.ndarray):
    """Gamma at node k for curve samples g_rows of shape (n, N) or (P, n, N)."""
    grid, N = sol.grid, sol.model.n_state
    n = grid.n
    g = np.asarray(g_rows, dtype=float)
    single = g.ndim == 2
    if single:
        g = g[None, :, :]
    if g.shape[1:] != (n, N):
        raise InvalidArgumentError(f"curve samples must be (P, {n}, {N}), got {g.shape}")
    full = psi_full_matrix(sol.model, grid, k, sol.disc)
    flat = g.reshape(-1, n * N)
    quad = grid.dt * np.einsum("pi,ij,pj->p", flat, full, flat)
    gam = np.exp(sol.phi[k] + quad)
    return float(gam[0]) if single else gam


def optimal_control_quadratic(model: QuadraticModel, sol: QuadraticSolution, t_index: int, g_t, x_t, xi_discounted):
    """Optimal amounts alpha = -(Theta Y_t + C' Z2_t)(X_t - xi* e^{-int r}).

    g_t holds curve samples on the left nodes, shape (n, N) or (P, n, N);
    only slots at or after t_index are read.  x_t is scalar or (P,).
    """
    grid, N, n = sol.grid, model.n_state, sol.grid.n
    g = np.asarray(g_t, dtype=float)
    single = g.ndim == 2
    if single:
        g = g[None, :, :]
    if g.shape[1:] != (n, N):
        raise InvalidArgumentError(f"curve samples must be (P, {n}, {N}), got {g.shape}")
    if t_index == n:
        y = g[:, n - 1, :]
        warnings.warn("control requested at the horizon; using the last curve slot",
                      RuntimeWarning, stacklevel=2)
    else:
        y = g[:, t_index, :]
    z2 = 2.0 * g.reshape(-1, n * N) @ sol.z2_maps[t_index]
    prem = y @ model.theta.T + z2 @ model.corr
    gap = np.asarray(x_t, dtype=float) - float(xi_discounted)
    if gap.ndim == 0:
        alpha = -prem * float(gap)
    else:
        alpha = -prem * gap[:, None]
    return alpha[0] if single else alpha


def volatility_matrix(model: QuadraticModel, y: np.ndarray) -> np.ndarray:
    """Stock volatility sigma(Y) with entries loadings[i, j] . Y."""
    if model.loadings is None:
        raise InvalidArgumentError("model has no stock loadings; asset positions are undefined")
    return np.einsum("ijk,k->ij", model.loadings, np.asarray(y, dtype=float))


def asset_positions(model: QuadraticModel, y: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Map amounts alpha to positions pi solving sigma(Y)' pi = alpha."""
    sig = volatility_matrix(model, y)
    try:
        cond = np.linalg.cond(sig)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularVolatilityError(
            f"volatility matrix is numerically singular (condition {cond:.3e})"
        )
    return np.linalg.solve(sig.T, np.asarray(alpha, dtype=float))


class QuadraticEvaluator:
    """Pathwise market price of risk and risk premium for the MC layer."""

    def __init__(self, model: QuadraticModel, grid: TimeGrid, solution: QuadraticSolution = None):
        self.model = model
        self.grid = grid
        self.solution = solve_operator_riccati(model, grid) if solution is None else solution
        self.n_factors = model.n_assets + model.n_state

    def premium_paths(self, z: np.ndarray):
        """Raw increments (P, n, d+N) -> (dB, lambda, premium, state paths).

        Steps the forward curve and reads off lambda = Theta Y and the
        premium Theta Y + C' Z2 at every left node.
        """
        model, grid, sol = self.model, self.grid, self.solution
        n, N, d = grid.n, model.n_state, model.n_assets
        dt = grid.dt
        db, dw = correlate_drivers_quadratic(model, z)
        P = z.shape[0]
        band = band_coefficients(model.kernel, grid)
        curve = np.tile(sol.g0s[None, :, :], (P, 1, 1))
        lam = np.zeros((P, n, d))
        prem = np.zeros((P, n, d))
        for k in range(n):
            yk = curve[:, k, :]
            z2 = 2.0 * curve[:, :n, :].reshape(P, n * N) @ sol.z2_maps[k]
            lam[:, k, :] = yk @ model.theta.T
            prem[:, k, :] = lam[:, k, :] + z2 @ model.corr
            incr = yk @ model.drift.T * dt + dw[:, k, :] @ model.eta.T
            curve[:, k + 1 :, :] += np.einsum("mab,pb->pma", band[: n - k], incr) / dt
        return db, lam, prem, curve


def markovian_riccati_ode(theta, eta, corr, drift, u_mat, rate, horizon: float, n: int, cap: float = ODE_CAP):
    """Backward RK4 integration of the matrix Riccati reduction.

    Solves, with F = D - 2 eta C Theta and M0 = U - 2 C C',

        dP/dt = Theta'Theta - P F - F' P - 2 P (eta M0 eta') P,  P_T = 0,
        dphi/dt = -2 r(t) - tr(P eta U eta'),                    phi_T = 0,

    on n uniform steps.  This is the exact reduction of the operator
    Riccati equation when the kernel is the identity, and serves as an
    independent oracle for that case.

    Returns (nodes, P path (n+1, N, N), phi path (n+1,)).

    Raises
    ------
    RiccatiBlowUpError
        When |P| exceeds ``cap`` (tangent-type finite-time blow-up),
        carrying the first grid time past the singularity.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    d, N = theta.shape
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    corr = np.atleast_2d(np.asarray(corr, dtype=float))
    drift = np.atleast_2d(np.asarray(drift, dtype=float))
    u_mat = np.atleast_2d(np.asarray(u_mat, dtype=float))
    if corr.shape != (N, d):
        raise InvalidArgumentError(f"corr must be ({N}, {d}), got {corr.shape}")
    if horizon <= 0 or n < 1:
        raise InvalidArgumentError("horizon must be positive and n >= 1")
    r_fun = rate if callable(rate) else (lambda t, _r=float(rate): _r)
    f = drift - 2.0 * eta @ corr @ theta
    m0 = u_mat - 2.0 * corr @ corr.T
    gram = theta.T @ theta
    quad = eta @ m0 @ eta.T
    trmat = eta @ u_mat @ eta.T

    def pdot(p):
        return gram - p @ f - f.T @ p - 2.0 * (p @ quad) @ p

    dt = horizon / n
    nodes = np.linspace(0.0, horizon, n + 1)
    p_path = np.zeros((n + 1, N, N))
    phi_path = np.zeros(n + 1)
    p = np.zeros((N, N))
    phi = 0.0
    for step in range(n):
        t1 = horizon - step * dt
        k1p = -pdot(p)
        k1f = 2.0 * r_fun(t1) + float(np.trace(p @ trmat))
        p2 = p + 0.5 * dt * k1p
        k2p = -pdot(p2)
        k2f = 2.0 * r_fun(t1 - 0.5 * dt) + float(np.trace(p2 @ trmat))
        p3 = p + 0.5 * dt * k2p
        k3p = -pdot(p3)
        k3f = 2.0 * r_fun(t1 - 0.5 * dt) + float(np.trace(p3 @ trmat))
        p4 = p + dt * k3p
        k4p = -pdot(p4)
        k4f = 2.0 * r_fun(t1 - dt) + float(np.trace(p4 @ trmat))
        p = p + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        phi = phi + (dt / 6.0) * (k1f + 2.0 * k2f + 2.0 * k3f + k4f)
        if not np.all(np.isfinite(p)) or np.max(np.abs(p)) > cap:
            raise RiccatiBlowUpError(
                f"matrix Riccati solution exceeded cap {cap:.1e} at t={horizon - (step + 1) * dt:.6g}",
                time=float(horizon - (step + 1) * dt),
            )
        p_path[n - step - 1] = p
        phi_path[n - step - 1] = phi
    return nodes, p_path, phi_path


def kappa_hat(x: float) -> float:
    """Resolvent amplification (x / (1 - x))^4 for contraction margin x < 1."""
    if x < 0:
        raise InvalidArgumentError("contraction margin must be nonnegative")
    if x >= 1.0:
        return float("inf")
    return float((x / (1.0 - x)) ** 4)


def contraction_report(model: QuadraticModel, grid: TimeGrid, c: float = 1.0) -> dict:
    """Premium growth constants from the kernel contraction margin.

    x = |D - 2 eta C Theta|_F . ||K||^2 must stay below 1 for the
    deflation to be a strict contraction; the report carries x, the
    amplification kappa_hat(x), the Frobenius norm of Theta and the
    resulting growth constant kappa = c |Theta|^2 (1 + |Theta|^4 kappa_hat).
    """
    x = float(np.linalg.norm(model.f_mat) * kernel_l2_norm_sq(model.kernel, grid))
    feasible = x < 1.0
    kh = kappa_hat(x) if feasible else float("inf")
    th2 = float(np.sum(model.theta**2))
    kappa = c * th2 * (1.0 + th2**2 * kh) if feasible else float("inf")
    return {
        "x": x,
        "kappa_hat": kh,
        "feasible": feasible,
        "theta_frob_sq": th2,
        "c": float(c),
        "kappa": kappa,
    }


def lambda_max_covariance(model: QuadraticModel, grid: TimeGrid, a: float, cap: int = COVARIANCE_DIM_CAP) -> dict:
    """Spectral check for exponential moments of the quadratic functional.

    Assembles the covariance operator of the centered pair process
    Z(s, u) = (Y_s / T, g_s(u)) on the product grid, an operator on
    L^2([0,T]^2; R^{2N}), eigendecomposes it and reports the sharp
    condition 2 a < 1 / lambda_1 together with the cruder trace-based
    sufficient condition 2 a < 1 / trace.

    A nonzero state drift is folded into the kernel by the resolvent
    transform K -> K + R * K before assembly, so the centered state is
    again a plain stochastic convolution.

    Raises
    ------
    MemoryCapError
        When the operator dimension 2 N n^2 exceeds ``cap``; rerun on a
        coarser grid (the spectrum converges quickly in n).
    """
    n, N = grid.n, model.n_state
    dim = 2 * N * n * n
    if dim > cap:
        raise MemoryCapError(
            f"covariance operator dimension 2 N n^2 = {dim} exceeds the cap {cap}; "
            "use a coarser grid for this diagnostic",
            limit=cap,
        )
    horizon = grid.horizon
    dt = grid.dt
    a_fold = folded_cells(model.kernel, grid)
    if np.any(model.drift != 0.0):
        kd = kernel_operator(grid, N, _bd_right(a_fold, model.drift, n))
        a_fold = a_fold + resolvent(kd).kernel @ a_fold
    ae = _bd_right(a_fold, model.eta, n).reshape(n, N, n, N).transpose(0, 2, 1, 3)
    g = np.einsum("ijab,bc,ljdc->iljad", ae, model.u_mat, ae)
    cs = np.cumsum(g, axis=2)
    ics = np.concatenate([np.zeros((n, n, 1, N, N)), cs], axis=2)
    idx = np.arange(n)
    mins = np.minimum(idx[:, None], idx[None, :])
    t11 = ics[idx[:, None], idx[None, :], mins]
    t12 = ics[idx[:, None, None], idx[None, None, :], np.minimum(idx[:, None, None], idx[None, :, None])]
    t22 = ics[idx[None, None, :, None], idx[None, None, None, :], np.minimum(idx[:, None, None, None], idx[None, :, None, None])]
    half = N * n * n
    b11 = np.broadcast_to(
        t11.transpose(0, 2, 1, 3)[:, None, :, :, None, :], (n, n, N, n, n, N)
    ).reshape(half, half)
    b12 = np.broadcast_to(
        t12.transpose(0, 3, 1, 2, 4)[:, None, :, :, :, :], (n, n, N, n, n, N)
    ).reshape(half, half)
    b22 = t22.transpose(0, 2, 4, 1, 3, 5).reshape(half, half)
    top = np.concatenate([b11 / horizon**2, b12 / horizon], axis=1)
    bot = np.concatenate([b12.T / horizon, b22], axis=1)
    folded = np.concatenate([top, bot], axis=0) * dt
    folded = 0.5 * (folded + folded.T)
    trace = float(np.trace(folded))
    pos_diag = ics[idx, idx]
    term1 = (1.0 / horizon) * float(np.einsum("iaa->", pos_diag[idx, idx]))
    term2 = dt * float(np.einsum("jiaa->", pos_diag[:, :n]))
    eigs = np.linalg.eigvalsh(folded)
    lam1 = float(max(eigs[-1], 0.0))
    check = term1 + term2
    scale = max(1.0, abs(trace))
    if abs(trace - check) > 1e-8 * scale:
        raise InternalConsistencyError(
            f"covariance trace identity failed: direct {trace:.10g} vs split {check:.10g}"
        )
    sharp = 2.0 * a * lam1 < 1.0
    sufficient = 2.0 * a * trace < 1.0
    return {
        "lambda1": lam1,
        "trace": trace,
        "a": float(a),
        "dim": dim,
        "sharp_ok": bool(sharp),
        "sufficient_ok": bool(sufficient),
    }


def two_asset_model(hurst=(0.08, 0.4), eta=(1.0, 1.0), leverage=(-0.7, -0.7), stock_corr: float = 0.7,
                    theta=(0.65, 0.65), y0=(0.3, 0.3), rate: float = 0.0, x0: float = 1.0) -> QuadraticModel:
    """Two-asset rough-plus-smooth benchmark model.

    Each asset i has a scalar fractional state factor with its own Hurst
    index, leverage c_i between the asset and its factor, and the two
    stocks are correlated with coefficient ``stock_corr``.  The stock
    volatility loads the factors through the correlation square root
    beta = [[1, 0], [rho, sqrt(1 - rho^2)]], so the risk premium matrix
    is Theta = beta^{-1} diag(theta).

    The factor kernels are sqrt(2 h) * u^(h - 1/2), normalized so the
    driving fractional noise has variance t^(2 h); the rough and smooth
    variances then cross at t = 1, which is the time scale separating
    the short- and long-horizon allocation regimes.

    The deflated driver covariance of this configuration is indefinite,
    which the construction permits deliberately (enforce_psd=False); the
    solver and diagnostics report it.
    """
    from .kernels import DiagonalKernel, FractionalKernel

    rho = float(stock_corr)
    if not -1.0 < rho < 1.0:
        raise InvalidArgumentError("stock correlation must lie in (-1, 1)")
    sq = np.sqrt(1.0 - rho * rho)
    h1, h2 = float(hurst[0]), float(hurst[1])
    c1, c2 = float(leverage[0]), float(leverage[1])
    th1, th2 = float(theta[0]), float(theta[1])
    kernel = DiagonalKernel([
        FractionalKernel(h1, scale=math.sqrt(2.0 * h1) * math.gamma(h1 + 0.5)),
        FractionalKernel(h2, scale=math.sqrt(2.0 * h2) * math.gamma(h2 + 0.5)),
    ])
    beta = np.array([[1.0, 0.0], [rho, sq]])
    theta_mat = np.linalg.solve(beta, np.diag([th1, th2]))
    corr = np.array([[c1, 0.0], [c2 * rho, c2 * sq]])
    eta_mat = np.diag(np.asarray(eta, dtype=float))
    loadings = np.zeros((2, 2, 2))
    for i in range(2):
        for j in range(2):
            loadings[i, j, i] = beta[i, j]
    return QuadraticModel(
        kernel=kernel, theta=theta_mat, eta=eta_mat, corr=corr, drift=None,
        g0=np.asarray(y0, dtype=float), rate=rate, x0=x0, loadings=loadings,
        enforce_psd=False,
    )


def wishart_model(kernel_scalar: Kernel, theta: np.ndarray, eta: np.ndarray, rho: np.ndarray,
                  g0_mat: np.ndarray, rate: float = 0.0, x0: float = 1.0) -> QuadraticModel:
    """Matrix-state variant flattened to a vector quadratic model.

    The d x d matrix state is vectorized column-major to N = d^2 factors;
    entry (i, j) of the matrix Brownian sheet correlates with stock j
    through rho_i, the vol-of-vol acts by left multiplication, and the
    premium row i reads row i of the matrix state through theta[i, :].
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    d = theta.shape[0]
    if theta.shape != (d, d):
        raise InvalidArgumentError("theta must be square for the matrix-state variant")
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (d,))
    if np.any(np.abs(rho) > 1.0):
        raise InvalidArgumentError("row correlations must lie in [-1, 1]")
    N = d * d
    from .kernels import DiagonalKernel

    if kernel_scalar.dim != 1:
        raise InvalidArgumentError("matrix-state variant expects a scalar base kernel")
    kernel = DiagonalKernel([kernel_scalar] * N)
    theta_big = np.zeros((d, N))
    corr = np.zeros((N, d))
    for i in range(d):
        for j in range(d):
            k = j * d + i
            theta_big[i, k] = theta[i, j]
            corr[k, j] = rho[i]
    eta_big = np.kron(np.eye(d), eta)
    g0_flat = np.asarray(g0_mat, dtype=float).reshape(N, order="F")
    return QuadraticModel(
        kernel=kernel, theta=theta_big, eta=eta_big, corr=corr, drift=None,
        g0=g0_flat, rate=rate, x0=x0, enforce_psd=True,
    )
