"""Bachelier pricing of options on forwards, reliability options and
flow-forward tracking error.

Under ``Q`` the forward ``F(T, Tj)`` given ``F_t`` is normal with mean
``F_t`` and variance ``sigma(t, T, Tj)**2 = int_t^T |K(Tj, u)|^2 du``, so
vanilla prices follow the normal (Bachelier) model with that volatility.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DomainError
from .kernels import l2_segment
from .market import MarketSpec, risk_neutral_seasonality
from .quadrature import _reference_rule, integrate

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def norm_cdf(x):
    return ndtr(x)


@dataclass(frozen=True)
class VanillaOption:
    """European call or put on the forward ``F(., Tj)``, expiring at ``T < Tj``."""

    kind: str
    strike: float
    T: float
    Tj: float

    def __post_init__(self):
        where = "pricing.VanillaOption"
        if self.kind not in ("call", "put"):
            raise DomainError("kind must be 'call' or 'put'", where)
        if not 0 <= self.T < self.Tj:
            raise DomainError("need 0 <= T < Tj", where)


@dataclass(frozen=True)
class ReliabilityOptionSpec:
    """Pays ``int_{T1}^{T2} (S_T - K)^+ dT``."""

    strike: float
    window: tuple

    def __post_init__(self):
        lo, hi = (float(x) for x in self.window)
        if not 0 <= lo < hi:
            raise DomainError("window must satisfy 0 <= T1 < T2", "pricing.ReliabilityOptionSpec")
        object.__setattr__(self, "window", (lo, hi))


@dataclass(frozen=True)
class DiscountCurve:
    """Right-continuous piecewise-constant short rate; ``rates[k]`` on ``[times[k], times[k+1])``."""

    times: tuple
    rates: tuple

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        r = tuple(float(x) for x in self.rates)
        if not t or t[0] != 0.0 or len(t) != len(r) or any(b <= a for a, b in zip(t, t[1:])):
            raise DomainError("times must start at 0, increase strictly and match rates",
                              "pricing.DiscountCurve")
        if not all(math.isfinite(x) for x in r):
            raise DomainError("rates must be finite", "pricing.DiscountCurve")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "rates", r)

    @classmethod
    def flat(cls, r):
        return cls((0.0,), (r,))

    def integral(self, a, b):
        """``int_a^b r(u) du``."""
        edges = list(self.times[1:]) + [math.inf]
        total = []
        for lo, hi, r in zip(self.times, edges, self.rates):
            lo, hi = max(lo, a), min(hi, b)
            if hi > lo:
                total.append(r * (hi - lo))
        return math.fsum(total)

    def factor(self, t, T):
        if t > T:
            raise DomainError("need t <= T", "pricing.DiscountCurve.factor")
        return math.exp(-self.integral(t, T))

    def to_dict(self):
        return {"times": list(self.times), "rates": list(self.rates)}


def discounted(value, curve, t, T):
    """Multiply by ``exp(-int_t^T r(u) du)``; ``curve=None`` means zero rates."""
    if curve is None:
        if t > T:
            raise DomainError("need t <= T", "pricing.discounted")
        return value
    return value * curve.factor(t, T)


# Bachelier -----------------------------------------------------------------------

def bachelier_vol(market, t, T, Tj):
    """``sigma(t, T, Tj) = sqrt(sum_i int_t^T K_i(Tj, u)^2 du)``; ``T == Tj`` is allowed."""
    if not 0 <= t <= T <= Tj:
        raise DomainError("need 0 <= t <= T <= Tj", "pricing.bachelier_vol")
    if Tj > market.horizon * (1 + 1e-12):
        raise DomainError("maturity beyond the market horizon", "pricing.bachelier_vol")
    if t == T:
        return 0.0
    return math.sqrt(math.fsum(float(l2_segment(k, t, T, Tj)) for k in market.factors))


def bachelier_call(F, K, sigma):
    """Normal-model call value ``(F - K) N(d) + sigma n(d)``, ``d = (F - K) / sigma``."""
    if sigma < 0:
        raise DomainError("volatility must be non-negative", "pricing.bachelier_call")
    if sigma == 0:
        return max(F - K, 0.0)
    d = (F - K) / sigma
    return float((F - K) * norm_cdf(d) + sigma * norm_pdf(d))


def bachelier_put_direct(F, K, sigma):
    """Put from its own formula ``(K - F) N(-d) + sigma n(d)``."""
    if sigma == 0:
        return max(K - F, 0.0)
    d = (F - K) / sigma
    return float((K - F) * norm_cdf(-d) + sigma * norm_pdf(d))


def bachelier_delta(F, K, sigma):
    if sigma == 0:
        return 1.0 if F > K else (0.0 if F < K else 0.5)
    return float(norm_cdf((F - K) / sigma))


def _sigma(market, option, t):
    if isinstance(market, MarketSpec):
        return bachelier_vol(market, t, option.T, option.Tj)
    sigma = float(market)  # a bare volatility, handy for quick what-ifs
    if sigma < 0:
        raise DomainError("volatility must be non-negative", "pricing")
    return sigma


def call_price(market, option, t, F_t, curve=None):
    """Call on ``F(., Tj)`` at time ``t`` given the quote ``F_t``.

    ``market`` may be a :class:`MarketSpec` or a volatility number.
    """
    if not 0 <= t <= option.T:
        raise DomainError("need 0 <= t <= T", "pricing.call_price")
    sigma = _sigma(market, option, t)
    return discounted(bachelier_call(F_t, option.strike, sigma), curve, t, option.T)


def put_price(market, option, t, F_t, curve=None):
    """Put via call-put parity ``P = C - (F_t - K)`` (discounted alike)."""
    if not 0 <= t <= option.T:
        raise DomainError("need 0 <= t <= T", "pricing.put_price")
    sigma = _sigma(market, option, t)
    value = bachelier_call(F_t, option.strike, sigma) - (F_t - option.strike)
    return discounted(value, curve, t, option.T)


def option_price(market, option, t, F_t, curve=None):
    fn = call_price if option.kind == "call" else put_price
    return fn(market, option, t, F_t, curve)


def hedge_delta(market, option, t, F_t):
    """Units of the forward held: ``N(d)`` for calls and ``N(d) - 1`` for puts."""
    if not 0 <= t <= option.T:
        raise DomainError("need 0 <= t <= T", "pricing.hedge_delta")
    delta = bachelier_delta(F_t, option.strike, _sigma(market, option, t))
    return delta if option.kind == "call" else delta - 1.0


# reliability option ------------------------------------------------------------------

@dataclass
class ROResult:
    price: float
    window: tuple
    quadrature_panels: int


def _ro_integrand(market, K, T):
    T = np.asarray(T, float)
    var = sum(np.asarray(k.square_integral(T, np.zeros_like(T), T), float) for k in market.factors)
    sigma = np.sqrt(var)
    mean = np.asarray(risk_neutral_seasonality(market, T), float)
    out = np.maximum(mean - K, 0.0)
    pos = sigma > 0
    d = (mean[pos] - K) / sigma[pos]
    out[pos] = sigma[pos] * (d * norm_cdf(d) + norm_pdf(d))
    return out


def reliability_option_price(market, spec, tol=1e-8, max_panels=1024, order=8):
    """Time-0 value ``int_{T1}^{T2} sigma(0,T,T) (d_T N(d_T) + n(d_T)) dT``.

    The outer integral uses composite Gauss-Legendre panels, doubled until two
    successive estimates agree to ``tol * max(1, |I|)``.
    """
    lo, hi = spec.window
    if hi > market.horizon * (1 + 1e-12):
        raise DomainError("window extends beyond the market horizon", "pricing.reliability_option_price")
    # sigma(0, T, T) behaves like a power of T near T = 0
    grade, depth = ("left", 20) if lo == 0 else ("none", 0)
    split, prev = 1, None
    while True:
        nodes, weights, panels = _reference_rule(order, depth, grade, split)
        vals = _ro_integrand(market, spec.strike, lo + (hi - lo) * nodes)
        cur = float((hi - lo) * (vals @ weights))
        if prev is not None and abs(cur - prev) <= tol * max(1.0, abs(cur)):
            break
        if 2 * panels > max_panels:
            break
        prev, split = cur, split * 2
    return ROResult(cur, (lo, hi), int(panels))


# flow forwards -------------------------------------------------------------------------

def tracking_error(market, t, T_tilde, Tj, Tk):
    """Variance of ``F(t, T_tilde) - F_flow(t, Tj, Tk)`` driven by the kernels.

    Equals ``int_0^t sum_i |K_i(T_tilde, s) - Kbar_i(s, Tj, Tk)|^2 ds`` with
    ``Kbar_i`` the delivery-period average of ``K_i(., s)``.
    """
    if not 0 <= t <= Tj <= T_tilde <= Tk or Tj == Tk:
        raise DomainError("need 0 <= t <= Tj <= T_tilde <= Tk and Tj < Tk", "pricing.tracking_error")
    if Tk > market.horizon * (1 + 1e-12):
        raise DomainError("delivery period beyond the horizon", "pricing.tracking_error")
    total = 0.0
    for k in market.factors:
        def diff2(s, k=k):
            avg = k.integral_t(s, np.full_like(s, Tj), np.full_like(s, Tk)) / (Tk - Tj)
            return (k._eval(np.full_like(s, T_tilde), s) - avg) ** 2
        total += float(integrate(diff2, 0.0, t, config=k.quad))
    return total
