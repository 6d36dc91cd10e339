"""Optimal investment in forwards for CRRA utilities (martingale method).

For ``u(x) = x**gamma / gamma`` (``gamma < 1``, log utility at ``gamma = 0``)
and a deterministic market price of risk, the optimal terminal wealth is
``X*_T = (x0 / H0) Z_T**(1/(gamma-1))`` with

    H_t = exp(1/2 * beta/(1-gamma) * int_t^T |theta_s|^2 ds),  beta = gamma/(1-gamma).

The running optimal wealth is ``X*_t = x0 (H_t/H0) Z_t**(-1/(1-gamma))`` and
the hedge holds ``Delta*_t = X*_t/(1-gamma) * theta_t^T K-bar_left^{-1}(t)``
units of each traded forward.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IncompletenessError, NumericalError, PreconditionError
from .market import KernelMatrix, PiecewiseConstantTheta, kernel_matrices, left_inverse_matrix
from .simulation import forward_weights, mc_estimate


@dataclass(frozen=True, eq=False)
class CRRAPolicy:
    """CRRA investor with risk aversion ``gamma < 1`` and horizon ``T``.

    Parameters
    ----------
    gamma : float
        Utility exponent; 0 selects log utility.
    x0 : float
        Initial capital, > 0.
    T : float
        Investment horizon.
    theta : PiecewiseConstantTheta or array_like
        Market price of risk.
    """

    gamma: float
    x0: float
    T: float
    theta: PiecewiseConstantTheta
    beta: float = field(init=False)
    c: float = field(init=False)
    H0: float = field(init=False)
    lambda_star: float = field(init=False)

    def __post_init__(self):
        where = "portfolio.CRRAPolicy"
        g = float(self.gamma)
        if not g < 1:
            raise PreconditionError("CRRA utility needs gamma < 1", where)
        if not self.x0 > 0:
            raise DomainError("initial capital must be positive", where)
        if not self.T > 0:
            raise DomainError("horizon must be positive", where)
        theta = self.theta
        if not isinstance(theta, PiecewiseConstantTheta):
            theta = PiecewiseConstantTheta.constant(theta)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", g / (1 - g))
        object.__setattr__(self, "c", -1 / (1 - g))
        object.__setattr__(self, "H0", self.h(0.0))
        # (x0 / E_P[Z_T^{gamma/(gamma-1)}])^{gamma-1}, where the expectation equals H0
        object.__setattr__(self, "lambda_star", (self.x0 / self.H0) ** (g - 1))

    @classmethod
    def for_market(cls, market, gamma, x0, T):
        if T > market.maturities[0]:
            raise PreconditionError("investment horizon must not exceed T_1", "portfolio.CRRAPolicy")
        return cls(gamma, x0, T, market.theta)

    def h(self, t):
        if not 0 <= t <= self.T:
            raise DomainError("need 0 <= t <= T", "portfolio.h_factor")
        return math.exp(0.5 * self.beta / (1 - self.gamma) * self.theta.integral_sq(t, self.T))

    def utility(self, x):
        x = np.asarray(x, float)
        if self.gamma == 0:
            return np.log(x)
        return x ** self.gamma / self.gamma


def _positive(z, where):
    z = np.asarray(z, float)
    if np.any(z <= 0):
        raise DomainError("density must be positive", where)
    return z


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def terminal_wealth(policy, Z_T):
    """``X*_T = (x0 / H0) Z_T**(1/(gamma-1))``."""
    Z = _positive(Z_T, "portfolio.terminal_wealth")
    return _out(policy.x0 / policy.H0 * Z ** (1 / (policy.gamma - 1)))


def h_factor(policy, t):
    """Deterministic factor ``H_t``."""
    return policy.h(t)


def optimal_wealth(policy, t, Z_t):
    """``X*_t = x0 (H_t / H0) Z_t**(-1/(1-gamma))``."""
    Z = _positive(Z_t, "portfolio.optimal_wealth")
    return _out(policy.x0 * policy.h(t) / policy.H0 * Z ** (-1 / (1 - policy.gamma)))


def optimal_delta(policy, t, Xstar_t, kmat, theta_t):
    """Optimal forward holdings ``X*_t/(1-gamma) theta_t^T K-bar_left^{-1}(t)``.

    Returns
    -------
    ndarray, shape (m,)
        Units held of each traded forward; solves ``Delta K-bar = -c X* theta^T``.
    """
    K = kmat.entries if isinstance(kmat, KernelMatrix) else np.atleast_2d(np.asarray(kmat, float))
    theta_t = np.asarray(theta_t, float).ravel()
    if theta_t.size != K.shape[1]:
        raise DomainError("theta length must equal the number of factors", "portfolio.optimal_delta")
    L = left_inverse_matrix(kmat, where="portfolio.optimal_delta")
    delta = Xstar_t / (1 - policy.gamma) * (theta_t @ L)
    target = -policy.c * Xstar_t * theta_t
    resid = np.max(np.abs(delta @ K - target)) if K.size else 0.0
    if resid > 1e-10 * (1 + np.max(np.abs(target))):
        raise NumericalError(f"hedge equation residual {resid:.2e}", "portfolio.optimal_delta")
    return delta


def expected_utility(policy):
    """Closed-form optimal expected utility ``(x0**gamma/gamma) H0**(1-gamma)``.

    For log utility this is ``log x0 + 1/2 int_0^T |theta|^2``.
    """
    if policy.gamma == 0:
        return math.log(policy.x0) + 0.5 * policy.theta.integral_sq(0.0, policy.T)
    return policy.x0 ** policy.gamma / policy.gamma * policy.H0 ** (1 - policy.gamma)


# Monte Carlo ----------------------------------------------------------------------

def _check_grid(policy, ensemble):
    grid = ensemble.grid
    if not math.isclose(grid.horizon, policy.T, rel_tol=1e-12):
        raise DomainError("ensemble grid must end at the investment horizon", "portfolio")
    return grid


def _density_block(policy, grid, dw):
    th = policy.theta(grid.points[:-1])
    comp = 0.5 * np.concatenate([[0.0], np.cumsum(np.sum(th * th, axis=1) * grid.dt)])
    stoch = np.concatenate([np.zeros((dw.shape[0], 1)),
                            np.cumsum(np.einsum("psf,sf->ps", dw, th), axis=1)], axis=1)
    return np.exp(-stoch - comp)


def terminal_samples(policy, ensemble):
    """Per-path ``(Z_T, X*_T)`` under ``P``."""
    grid = _check_grid(policy, ensemble)
    blocks = ensemble.map_blocks(lambda b, dw: _density_block(policy, grid, dw)[:, -1])
    Z = np.concatenate(blocks)
    return Z, terminal_wealth(policy, Z)


def budget_mc(policy, ensemble):
    """``E_Q[X*_T] = E_P[Z_T X*_T]``; should equal ``x0``."""
    Z, X = terminal_samples(policy, ensemble)
    return mc_estimate(Z * X, ensemble.seed)


def expected_utility_mc(policy, ensemble):
    """Monte Carlo estimate of ``E_P[u(X*_T)]``."""
    _, X = terminal_samples(policy, ensemble)
    return mc_estimate(policy.utility(X), ensemble.seed)


def wealth_martingale_mc(policy, ensemble, t):
    """``E_Q[X*_t] = E_P[Z_t X*_t]`` at a grid time ``t``."""
    grid = _check_grid(policy, ensemble)
    k = int(grid.index([t])[0])
    Z = np.concatenate(ensemble.map_blocks(lambda b, dw: _density_block(policy, grid, dw)[:, k]))
    return mc_estimate(Z * optimal_wealth(policy, t, Z), ensemble.seed)


@dataclass
class WealthPath:
    """Per-time averages along a replication run."""

    times: np.ndarray
    mean_wealth: np.ndarray
    mean_delta: np.ndarray
    min_wealth: float


@dataclass
class _Hedge:
    directions: np.ndarray   # (steps, m): Delta*_k / X*_k
    weights: np.ndarray      # (steps, m, n): cell-averaged K(T_j, .)
    theta: np.ndarray        # (steps, n)


def _hedge_inputs(policy, market, grid):
    where = "portfolio.replicate"
    if market.n != policy.theta.n:
        raise DomainError("policy and market disagree on the factor count", where)
    if policy.T > market.maturities[0] * (1 + 1e-12):
        raise PreconditionError("investment horizon must not exceed T_1", where)
    times = grid.points[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mats = kernel_matrices(market, times)
    theta = policy.theta(times)
    inverses = []
    bad_run = 0
    for k, t in enumerate(times):
        # a kernel singular at the origin gives a non-finite matrix at t = 0
        try:
            if not np.isfinite(mats[k]).all():
                raise IncompletenessError(f"non-finite kernel matrix at t={t}", where, float(t))
            inverses.append(left_inverse_matrix(KernelMatrix(float(t), mats[k]), where=where))
            bad_run = 0
        except IncompletenessError:
            bad_run += 1
            if bad_run >= 3:
                raise
            if k > 0:
                warnings.warn(f"kernel matrix degenerate at t={t:.6g}; reusing the previous hedge",
                              RuntimeWarning, stacklevel=3)
            inverses.append(None)
    # isolated degenerate times reuse the previous left inverse (the next one at the start)
    first = next((L for L in inverses if L is not None), None)
    if first is None:
        raise IncompletenessError("kernel matrix degenerate on the whole grid", where)
    directions = np.empty((times.size, market.m))
    prev = first
    for k, L in enumerate(inverses):
        prev = L if L is not None else prev
        directions[k] = theta[k] @ prev / (1 - policy.gamma)
    weights = np.stack([np.stack([forward_weights(kern, grid, Tj) for kern in market.factors], axis=1)
                        for Tj in market.maturities], axis=1)
    return _Hedge(directions, weights, theta)


def _run_wealth(policy, grid, hedge, dw, strategy):
    """Integrate ``dX = Delta . dF`` along one block of paths."""
    dt = grid.dt
    Z = _density_block(policy, grid, dw)
    Hs = np.array([policy.h(t) for t in grid.points])
    xstar = policy.x0 * (Hs / policy.H0)[None, :] * Z ** (-1 / (1 - policy.gamma))
    dwq = dw + hedge.theta[None, :, :] * dt[None, :, None]
    dF = np.einsum("psf,smf->psm", dwq, hedge.weights)
    X = np.empty_like(xstar)
    X[:, 0] = policy.x0
    deltas = np.empty(dF.shape)
    for k in range(grid.n_steps):
        if strategy is None:
            delta = xstar[:, k, None] * hedge.directions[k]
        else:
            delta = strategy(k, X[:, k])
        deltas[:, k] = delta
        X[:, k + 1] = X[:, k] + np.sum(delta * dF[:, k], axis=1)
    return X, xstar, deltas


def replicate(policy, market, ensemble, return_path=False, norm="max"):
    """Self-financing replication of ``X*_T`` by discrete rebalancing.

    Parameters
    ----------
    norm : {"max", "rms"}
        How the relative terminal mismatch ``|X_T - X*_T| / X*_T`` is reduced
        over paths.  The root-mean-square is the stabler measure of the
        convergence rate; the maximum is the worst case.

    Returns
    -------
    float
        The reduced mismatch; with ``return_path`` also a
        :class:`WealthPath` of per-time averages.
    """
    if norm not in ("max", "rms"):
        raise DomainError("norm must be 'max' or 'rms'", "portfolio.replicate")
    grid = _check_grid(policy, ensemble)
    hedge = _hedge_inputs(policy, market, grid)

    def block(b, dw):
        X, xstar, deltas = _run_wealth(policy, grid, hedge, dw, None)
        rel = np.abs(X[:, -1] - xstar[:, -1]) / xstar[:, -1]
        return rel.max(), np.sum(rel ** 2), xstar.sum(axis=0), deltas.sum(axis=0), xstar.min()

    res = ensemble.map_blocks(block)
    n = ensemble.n_paths
    if norm == "max":
        err = float(max(r[0] for r in res))
    else:
        err = math.sqrt(math.fsum(r[1] for r in res) / n)
    if not return_path:
        return err
    path = WealthPath(grid.points.copy(), sum(r[2] for r in res) / n, sum(r[3] for r in res) / n,
                      float(min(r[4] for r in res)))
    return err, path


def buy_and_hold(holdings):
    """Strategy holding fixed units of each forward."""
    h = np.asarray(holdings, float)
    return lambda k, X: np.broadcast_to(h, (X.shape[0], h.size))


def constant_mix(units_per_wealth):
    """Strategy holding ``units_per_wealth * X_t`` units of each forward."""
    p = np.asarray(units_per_wealth, float)
    return lambda k, X: X[:, None] * p


def strategy_utility_gap(policy, market, ensemble, strategy):
    """Paired estimate of ``E_P[u(X*_T)] - E_P[u(X^Delta_T)]`` on shared paths.

    Raises if the comparison strategy's wealth turns non-positive, which
    would make it inadmissible for CRRA utility.
    """
    grid = _check_grid(policy, ensemble)
    hedge = _hedge_inputs(policy, market, grid)

    def block(b, dw):
        X, xstar, _ = _run_wealth(policy, grid, hedge, dw, strategy)
        if np.any(X <= 0):
            raise DomainError("comparison strategy is not admissible (wealth <= 0)",
                              "portfolio.strategy_utility_gap")
        return policy.utility(xstar[:, -1]) - policy.utility(X[:, -1])

    return mc_estimate(np.concatenate(ensemble.map_blocks(block)), ensemble.seed)
