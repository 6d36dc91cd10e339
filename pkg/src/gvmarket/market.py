"""n-factor electricity market: spot, forwards and the market price of risk.

The spot price is ``S_t = sum_i int_0^t K_i(t, s) dW^i_s + phi(t)``.  With a
deterministic market price of risk ``theta`` the measure change
``dW^Q = dW + theta dt`` turns the forward ``F(t, T) = E_Q[S_T | F_t]`` into
the driftless process ``dF(t, T) = K(T, t) . dW^Q_t`` started at the
risk-neutral seasonality ``phi_Q(T)``.
"""
import json
import math
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .errors import ArbitrageInconsistentError, DomainError, IncompletenessError
from .kernels import Kernel, check_square_integrable, flow_kernel, kernel_from_dict
from .quadrature import DEFAULT_CONFIG


# seasonality -----------------------------------------------------------------

@dataclass(frozen=True)
class ConstantSeasonality:
    level: float = 0.0

    def __call__(self, t):
        return np.full(np.shape(t), float(self.level)) if np.ndim(t) else float(self.level)

    def to_dict(self):
        return {"type": "constant", "level": self.level}


@dataclass(frozen=True)
class SinusoidalSeasonality:
    """``mean + amplitude * sin(2 pi t / period + phase)``."""

    mean: float
    amplitude: float
    period: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise DomainError("seasonality period must be positive", "market.SinusoidalSeasonality")

    def __call__(self, t):
        return self.mean + self.amplitude * np.sin(2 * np.pi * np.asarray(t, float) / self.period
                                                   + self.phase)

    def to_dict(self):
        return {"type": "sinusoidal", "mean": self.mean, "amplitude": self.amplitude,
                "period": self.period, "phase": self.phase}


@dataclass(frozen=True)
class PiecewiseLinearSeasonality:
    """Linear interpolation between knots, clamped outside the knot range."""

    knots: tuple

    def __post_init__(self):
        knots = tuple((float(t), float(v)) for t, v in self.knots)
        if not knots:
            raise DomainError("need at least one knot", "market.PiecewiseLinearSeasonality")
        times = [k[0] for k in knots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("knot times must be strictly increasing",
                              "market.PiecewiseLinearSeasonality")
        object.__setattr__(self, "knots", knots)

    def __call__(self, t):
        ts, vs = zip(*self.knots)
        out = np.interp(t, ts, vs)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self):
        return {"type": "piecewise_linear", "knots": [list(k) for k in self.knots]}


def seasonality_from_dict(d):
    kind = d.get("type")
    if kind == "constant":
        return ConstantSeasonality(d.get("level", 0.0))
    if kind == "sinusoidal":
        return SinusoidalSeasonality(d["mean"], d["amplitude"], d.get("period", 1.0), d.get("phase", 0.0))
    if kind == "piecewise_linear":
        return PiecewiseLinearSeasonality(d["knots"])
    raise DomainError(f"unknown seasonality type {kind!r}", "market.seasonality_from_dict")


# market price of risk --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PiecewiseConstantTheta:
    """Right-continuous step function ``[0, inf) -> R^n``.

    ``values[k]`` applies on ``[times[k], times[k+1])``; the last value
    extends indefinitely.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, float).ravel()
        values = np.atleast_2d(np.asarray(self.values, float))
        if times.size == 0 or times[0] != 0.0:
            raise DomainError("theta breakpoints must start at 0", "market.PiecewiseConstantTheta")
        if np.any(np.diff(times) <= 0):
            raise DomainError("theta breakpoints must be strictly increasing", "market.PiecewiseConstantTheta")
        if values.shape[0] != times.size:
            raise DomainError("need one theta vector per breakpoint", "market.PiecewiseConstantTheta")
        if not np.all(np.isfinite(values)):
            raise DomainError("theta must be finite", "market.PiecewiseConstantTheta")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value):
        return cls([0.0], [np.atleast_1d(np.asarray(value, float))])

    @property
    def n(self):
        return self.values.shape[1]

    def __call__(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, float), side="right") - 1
        return self.values[np.clip(idx, 0, None)]

    def pieces(self, a, b):
        """Yield ``(lo, hi, value)`` for the constant pieces covering [a, b]."""
        edges = np.append(self.times, np.inf)
        for k in range(self.times.size):
            lo, hi = max(a, edges[k]), min(b, edges[k + 1])
            if hi > lo:
                yield lo, hi, self.values[k]

    def integral_sq(self, a, b):
        """``int_a^b |theta(s)|^2 ds``."""
        return math.fsum((hi - lo) * float(v @ v) for lo, hi, v in self.pieces(a, b))

    def is_zero(self):
        return not np.any(self.values)

    def scaled(self, factor):
        return PiecewiseConstantTheta(self.times, factor * self.values)

    def to_dict(self):
        return {"times": self.times.tolist(), "values": self.values.tolist()}

    def __eq__(self, other):
        return (isinstance(other, PiecewiseConstantTheta) and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))


# market ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarketSpec:
    """Factor kernels, traded maturities, seasonality and market price of risk."""

    factors: tuple
    maturities: tuple
    seasonality: object = field(default_factory=ConstantSeasonality)
    theta: PiecewiseConstantTheta = None
    horizon: float = None

    def __post_init__(self):
        where = "market.MarketSpec"
        factors = tuple(self.factors)
        if not factors or not all(isinstance(k, Kernel) for k in factors):
            raise DomainError("need at least one factor kernel", where)
        mats = tuple(float(T) for T in self.maturities)
        if not mats:
            raise DomainError("need at least one maturity", where)
        if mats[0] <= 0 or any(b <= a for a, b in zip(mats, mats[1:])):
            raise DomainError("maturities must be positive and strictly increasing", where)
        horizon = float(self.horizon) if self.horizon is not None else mats[-1]
        if mats[-1] > horizon:
            raise DomainError("last maturity exceeds the horizon", where)
        theta = self.theta
        if theta is None:
            theta = PiecewiseConstantTheta.constant(np.zeros(len(factors)))
        elif not isinstance(theta, PiecewiseConstantTheta):
            theta = PiecewiseConstantTheta.constant(theta)
        if theta.n != len(factors):
            raise DomainError(f"theta has {theta.n} components for {len(factors)} factors", where)
        if not math.isfinite(theta.integral_sq(0.0, horizon)):
            raise DomainError("theta is not square integrable", where)
        for k in factors:
            check_square_integrable(k, horizon)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "horizon", horizon)

    @property
    def n(self):
        return len(self.factors)

    @property
    def m(self):
        return len(self.maturities)

    def with_theta(self, theta):
        return MarketSpec(self.factors, self.maturities, self.seasonality, theta, self.horizon)

    def to_dict(self):
        return {
            "factors": [k.to_dict() for k in self.factors],
            "maturities": list(self.maturities),
            "seasonality": self.seasonality.to_dict(),
            "theta": self.theta.to_dict(),
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, d, quad=DEFAULT_CONFIG):
        theta = d.get("theta")
        if theta is not None:
            theta = PiecewiseConstantTheta(theta["times"], theta["values"])
        return cls(
            factors=[kernel_from_dict(k, quad) for k in d["factors"]],
            maturities=d["maturities"],
            seasonality=seasonality_from_dict(d.get("seasonality", {"type": "constant"})),
            theta=theta,
            horizon=d.get("horizon"),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def __eq__(self, other):
        return isinstance(other, MarketSpec) and self.to_dict() == other.to_dict()


def year_fraction(day, origin):
    """ACT/365 year fraction between two ISO dates (or ``date`` objects)."""
    if isinstance(day, str):
        day = date.fromisoformat(day)
    if isinstance(origin, str):
        origin = date.fromisoformat(origin)
    return (day - origin).days / 365.0


@dataclass(frozen=True)
class ForwardQuote:
    t: float
    maturity: float
    price: float

    def __post_init__(self):
        if self.t > self.maturity:
            raise DomainError("quote time after maturity", "market.ForwardQuote")


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """``entries[j, i] = K_i(T_j, t)``: rows are maturities, columns factors."""

    t: float
    entries: np.ndarray

    @property
    def shape(self):
        return self.entries.shape


# operations ------------------------------------------------------------------

def risk_neutral_seasonality(market, T):
    """``phi_Q(T) = phi(T) - int_0^T K(T, s) . theta(s) ds``."""
    T_arr = np.asarray(T, float)
    if np.any(T_arr < 0) or np.any(T_arr > market.horizon):
        raise DomainError("T outside [0, horizon]", "market.risk_neutral_seasonality")
    flat = T_arr.ravel()
    shift = np.zeros(flat.shape)
    for idx, TT in enumerate(flat):
        for lo, hi, val in market.theta.pieces(0.0, TT):
            for i, k in enumerate(market.factors):
                if val[i] != 0.0:
                    shift[idx] += val[i] * float(k.integral_s(TT, lo, hi))
    out = np.asarray(market.seasonality(flat), float) - shift
    return float(out[0]) if T_arr.ndim == 0 else out.reshape(T_arr.shape)


def drift_vol(market, t, T):
    """Drift ``mu = K(T, t) . theta(t)`` and volatility vector ``K(T, t)`` of F(., T)."""
    if not 0 <= t <= T <= market.horizon:
        raise DomainError("need 0 <= t <= T <= horizon", "market.drift_vol")
    sigma = np.array([k(T, t) for k in market.factors])
    return float(sigma @ market.theta(t)), sigma


def kernel_matrices(market, ts):
    """Stack of kernel matrices, shape ``(len(ts), m, n)``; no range checks."""
    ts = np.asarray(ts, float)
    mats = np.asarray(market.maturities)
    out = np.empty(ts.shape + (market.m, market.n))
    TT, SS = np.meshgrid(mats, ts)
    for i, k in enumerate(market.factors):
        out[..., i] = k._eval(TT, SS)
    return out


def kernel_matrix(market, t):
    """``K-bar(t)`` with entry ``(j, i) = K_i(T_j, t)`` for ``0 <= t < T_1``."""
    if not 0 <= t < market.maturities[0]:
        raise DomainError(f"kernel matrix needs 0 <= t < T_1, got t={t}", "market.kernel_matrix")
    entries = np.array([[k(T, t) for k in market.factors] for T in market.maturities])
    return KernelMatrix(float(t), entries)


def _entries(kmat):
    return kmat.entries if isinstance(kmat, KernelMatrix) else np.atleast_2d(np.asarray(kmat, float))


def _time(kmat):
    return kmat.t if isinstance(kmat, KernelMatrix) else None


def left_inverse_matrix(kmat, rank_tol=1e-12, cond_switch=1e8, where="market.left_inverse"):
    """``(K^T K)^{-1} K^T``, falling back to the SVD pseudo-inverse when ill conditioned."""
    K = _entries(kmat)
    m, n = K.shape
    sv = np.linalg.svd(K, compute_uv=False)
    if m < n or sv[0] == 0 or sv[-1] <= rank_tol * sv[0]:
        raise IncompletenessError(f"kernel matrix has rank < {n} at t={_time(kmat)}", where, _time(kmat))
    if sv[0] / sv[-1] > cond_switch:
        return np.linalg.pinv(K, rcond=rank_tol)
    if m == n:
        return np.linalg.solve(K, np.eye(n))
    return np.linalg.solve(K.T @ K, K.T)


def solve_theta(mu_bar, kmat, return_residual=False):
    """Market price of risk from observed forward drifts: ``K-bar theta = mu-bar``.

    Raises
    ------
    IncompletenessError
        The kernel matrix does not have full column rank.
    ArbitrageInconsistentError
        ``m > n`` and ``mu_bar`` is not in the range of the kernel matrix.
    """
    K = _entries(kmat)
    mu = np.asarray(mu_bar, float).ravel()
    if mu.size != K.shape[0]:
        raise DomainError("drift vector length must equal the number of maturities", "market.solve_theta")
    theta = left_inverse_matrix(kmat, where="market.solve_theta") @ mu
    residual = float(np.linalg.norm(K @ theta - mu))
    if residual > 1e-8 * (1.0 + np.linalg.norm(mu)):
        raise ArbitrageInconsistentError(
            f"drifts are inconsistent with the kernel matrix (residual {residual:.3e})",
            "market.solve_theta", residual)
    return (theta, residual) if return_residual else theta


def forward_initial(market, T):
    """Initial forward quote ``F(0, T) = phi_Q(T)``."""
    return ForwardQuote(0.0, float(T), risk_neutral_seasonality(market, T))


def flow_forward_vol(market, t, Tj, Tk):
    """Per-factor delivery-period kernel ``(1/(Tk-Tj)) int_Tj^Tk K_i(T, t) dT``."""
    if Tk > market.horizon:
        raise DomainError("delivery period beyond the horizon", "market.flow_forward_vol")
    return np.array([flow_kernel(k, t, Tj, Tk) for k in market.factors])
