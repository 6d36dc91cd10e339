"""Scalar Volterra kernels and their integrals.

Every kernel ``K(t, s)`` vanishes for ``s > t`` and drives a Gaussian
Volterra factor ``int_0^t K(t, s) dW_s``.  The families provided are

* ``ConstantKernel``            c (Brownian motion when c = 1)
* ``RiemannLiouvilleKernel``    (t - s)**(H - 1/2) / Gamma(H + 1/2)
* ``FbmHighKernel``             Molchan-Golosov kernel of fBm, H > 1/2
* ``FbmLowKernel``              Molchan-Golosov kernel of fBm, H < 1/2
* ``StdOUKernel``               exp(alpha (t - s))
* ``VolterraOUKernel``          kernel of the Langevin equation
  dY = alpha Y dt + dZ driven by a Volterra process Z with kernel ``base``.

Kernels are immutable, accept numpy arrays and are safe to share between
threads.  Point evaluation goes through ``__call__``, which validates the
arguments; the ``_eval`` methods are the unchecked vectorised internals used
by the quadrature routines.
"""
from dataclasses import dataclass, field, replace
from math import gamma, sqrt

import numpy as np

from .errors import DomainError, PreconditionError, SingularPointError, UnsupportedRegimeError
from .quadrature import DEFAULT_CONFIG, QuadratureConfig, integrate


@dataclass(frozen=True)
class HurstExponent:
    """Hurst parameter in (0, 1) together with its regime."""

    value: float
    regime: str = field(init=False, compare=False)

    def __post_init__(self):
        v = float(self.value)
        if not 0.0 < v < 1.0:
            raise DomainError(f"Hurst exponent must lie in (0, 1), got {v}", "kernels.HurstExponent")
        object.__setattr__(self, "value", v)
        regime = "brownian" if v == 0.5 else ("low" if v < 0.5 else "high")
        object.__setattr__(self, "regime", regime)

    def __float__(self):
        return self.value


def _hurst(h):
    return h if isinstance(h, HurstExponent) else HurstExponent(h)


def rl_constant(h):
    """Normalising constant 1/Gamma(H + 1/2) of the Riemann-Liouville kernel."""
    return 1.0 / gamma(h + 0.5)


def fbm_constant_low(h):
    """Constant c-bar_H of the fBm kernel (also c_H / (H - 1/2) for H > 1/2)."""
    return sqrt(2.0 * h * gamma(1.5 - h) / (gamma(h + 0.5) * gamma(2.0 - 2.0 * h)))


def fbm_constant_high(h):
    """Constant c_H of the compact-interval fBm kernel for H > 1/2."""
    return (h - 0.5) * fbm_constant_low(h)


_INNER_DEPTH = 8


def endpoint_integral(f, a, b, *params, left_exp=0.0, right_exp=0.0, config=DEFAULT_CONFIG):
    """``int_a^b f(u, *params) du`` for integrands that may behave like
    ``(u - a)**left_exp`` and ``(b - u)**right_exp`` at the ends.

    Each negative power is removed by substitution, reflecting the variable
    for the right end; when both ends are singular the interval is split at
    its midpoint first.  The substitution is exact, so it is harmless when the
    endpoint turns out to be regular.
    """
    a, b, *params = np.broadcast_arrays(*(np.asarray(x, float) for x in (a, b) + params))
    e0, e1 = min(left_exp, 0.0), min(right_exp, 0.0)
    mid = 0.5 * (a + b)

    def left(u, aa, *pp):
        return f(u, *pp) * (u - aa) ** -e0 if e0 else f(u, *pp)

    def right(v, bb, *pp):
        # weight by the distance actually represented, so rounding in b - v only
        # shifts the evaluation point; below one ulp stay just off the endpoint
        u = np.minimum(bb - v, np.nextafter(bb, -np.inf))
        return f(u, *pp) * (bb - u) ** -e1 if e1 else f(u, *pp)

    # split only when both ends need the substitution
    if not e1:
        return integrate(left, a, b, a, *params, config=config, weight_exponent=e0 or None)
    if not e0:
        return integrate(right, 0.0, b - a, b, *params, config=config, weight_exponent=e1)
    lo = integrate(left, a, mid, a, *params, config=config, weight_exponent=e0)
    hi = integrate(right, 0.0, b - mid, b, *params, config=config, weight_exponent=e1)
    return lo + hi


def _touching_integral(f, a, b, p, config, left, right):
    """:func:`endpoint_integral` applying each endpoint power only on rows
    whose endpoint actually sits on the singular point.

    ``left`` and ``right`` are ``(mask, exponent)`` pairs.
    """
    out = np.zeros(a.shape)
    lmask = left[0] & (left[1] < 0)
    rmask = right[0] & (right[1] < 0)
    for lm in (False, True):
        for rm in (False, True):
            rows = (lmask == lm) & (rmask == rm)
            if rows.any():
                out[rows] = endpoint_integral(f, a[rows], b[rows], p[rows], config=config,
                                              left_exp=left[1] if lm else 0.0,
                                              right_exp=right[1] if rm else 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Kernel:
    """Base class for Volterra kernels.

    Subclasses describe their endpoint behaviour through two exponents:
    ``K(t, s) ~ s**origin_exponent`` as ``s -> 0`` and
    ``K(t, s) ~ (t - s)**diag_exponent`` as ``s -> t``.  Negative values mark
    integrable singularities where point evaluation is refused.
    """

    quad: QuadratureConfig = field(default=DEFAULT_CONFIG, repr=False, compare=False, kw_only=True)

    kind = None
    stationary = False
    supports_diff = False

    @property
    def origin_exponent(self):
        return 0.0

    @property
    def diag_exponent(self):
        return 0.0

    @property
    def _inner_quad(self):
        # integrals nested inside point evaluation have their endpoint power
        # removed by substitution, so a shallow graded mesh is enough
        return replace(self.quad, grading_depth=min(self.quad.grading_depth, _INNER_DEPTH))

    def __call__(self, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        where = f"kernels.{type(self).__name__}"
        if np.any(s > t):
            raise DomainError("Volterra kernel evaluated with s > t", where)
        if np.any(s < 0):
            raise DomainError("negative time", where)
        if self.diag_exponent < 0 and np.any(s == t):
            raise SingularPointError("kernel is singular at s = t", where)
        if self.origin_exponent < 0 and np.any(s == 0):
            raise DomainError("kernel is not defined at s = 0", where)
        out = self._eval(t, s)
        return float(out) if out.ndim == 0 else out

    def _eval(self, t, s):
        raise NotImplementedError

    def lag(self, tau):
        """``K(s + tau, s)`` for stationary kernels."""
        if not self.stationary:
            raise UnsupportedRegimeError("kernel is not a function of t - s", "kernels.lag")
        tau = np.asarray(tau, float)
        return self._eval(tau, np.zeros_like(tau))

    # integrals ------------------------------------------------------------
    def integral_s(self, t, a, b):
        """``int_a^b K(t, s) ds`` for ``0 <= a <= b <= t``."""
        t, a, b = np.broadcast_arrays(*(np.asarray(x, float) for x in (t, a, b)))
        return _touching_integral(lambda u, tt: self._eval(tt, u), a, b, t, self.quad,
                                  (a == 0, self.origin_exponent), (b == t, self.diag_exponent))

    def integral_t(self, s, a, b):
        """``int_a^b K(T, s) dT`` for ``s <= a <= b``."""
        s, a, b = np.broadcast_arrays(*(np.asarray(x, float) for x in (s, a, b)))
        return _touching_integral(lambda u, ss: self._eval(u, ss), a, b, s, self.quad,
                                  (a == s, self.diag_exponent), (np.zeros(a.shape, bool), 0.0))

    def square_integral(self, t, a, b):
        """``int_a^b K(t, u)**2 du`` for ``0 <= a <= b <= t``."""
        t, a, b = np.broadcast_arrays(*(np.asarray(x, float) for x in (t, a, b)))
        return _touching_integral(lambda u, tt: self._eval(tt, u) ** 2, a, b, t, self.quad,
                                  (a == 0, 2 * self.origin_exponent), (b == t, 2 * self.diag_exponent))

    # derivative in the first argument, split as regular * (t - s)**d1_exponent
    def d1_regular(self, t, s):
        raise UnsupportedRegimeError(f"{self.kind} kernel has no integrable first-argument derivative",
                                     "kernels.ou_kernel_diff")

    @property
    def d1_exponent(self):
        return 0.0

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantKernel(Kernel):
    c: float = 1.0

    kind = "constant"
    stationary = True

    def __post_init__(self):
        object.__setattr__(self, "c", float(self.c))

    def _eval(self, t, s):
        return np.full(np.broadcast(t, s).shape, self.c)

    def integral_s(self, t, a, b):
        return self.c * (np.asarray(b, float) - a) + 0.0 * np.asarray(t, float)

    def integral_t(self, s, a, b):
        return self.c * (np.asarray(b, float) - a) + 0.0 * np.asarray(s, float)

    def square_integral(self, t, a, b):
        return self.c ** 2 * (np.asarray(b, float) - a) + 0.0 * np.asarray(t, float)

    def to_dict(self):
        return {"type": "constant", "c": self.c}


@dataclass(frozen=True)
class RiemannLiouvilleKernel(Kernel):
    """``(t - s)**(H - 1/2) / Gamma(H + 1/2)``."""

    hurst: HurstExponent = None
    const: float = field(init=False, repr=False, compare=False)

    kind = "rl"
    stationary = True

    def __post_init__(self):
        object.__setattr__(self, "hurst", _hurst(self.hurst))
        object.__setattr__(self, "const", rl_constant(self.hurst.value))

    @property
    def H(self):
        return self.hurst.value

    @property
    def supports_diff(self):
        return self.H > 0.5

    @property
    def diag_exponent(self):
        return self.H - 0.5

    def _eval(self, t, s):
        return self.const * (t - s) ** (self.H - 0.5)

    def integral_s(self, t, a, b):
        t, a, b = (np.asarray(x, float) for x in (t, a, b))
        e = self.H + 0.5
        return self.const * ((t - a) ** e - (t - b) ** e) / e

    def integral_t(self, s, a, b):
        s, a, b = (np.asarray(x, float) for x in (s, a, b))
        e = self.H + 0.5
        return self.const * ((b - s) ** e - (a - s) ** e) / e

    def square_integral(self, t, a, b):
        t, a, b = (np.asarray(x, float) for x in (t, a, b))
        e = 2.0 * self.H
        return self.const ** 2 * ((t - a) ** e - (t - b) ** e) / e

    def d1_regular(self, t, s):
        if not self.supports_diff:
            super().d1_regular(t, s)
        return np.full(np.broadcast(t, s).shape, self.const * (self.H - 0.5))

    @property
    def d1_exponent(self):
        return self.H - 1.5

    def to_dict(self):
        return {"type": "rl", "hurst": self.H}


@dataclass(frozen=True)
class FbmHighKernel(Kernel):
    """fBm kernel for H > 1/2:
    ``c_H s**(1/2-H) int_s^t u**(H-1/2) (u-s)**(H-3/2) du``."""

    hurst: HurstExponent = None
    const: float = field(init=False, repr=False, compare=False)

    kind = "fbm"

    def __post_init__(self):
        h = _hurst(self.hurst)
        if h.regime != "high":
            raise UnsupportedRegimeError(f"FbmHigh needs H > 1/2, got {h.value}", "kernels.FbmHighKernel")
        object.__setattr__(self, "hurst", h)
        object.__setattr__(self, "const", fbm_constant_high(h.value))

    @property
    def H(self):
        return self.hurst.value

    supports_diff = True

    @property
    def origin_exponent(self):
        return 0.5 - self.H

    @property
    def diag_exponent(self):
        return self.H - 0.5

    def _eval(self, t, s):
        h = self.H
        # singular factor (u-s)^(H-3/2) handled by the quadrature weight
        inner = integrate(lambda u: u ** (h - 0.5), s, t, config=self._inner_quad,
                          weight_exponent=h - 1.5)
        return self.const * s ** (0.5 - h) * inner

    def d1_regular(self, t, s):
        h = self.H
        return self.const * s ** (0.5 - h) * t ** (h - 0.5)

    @property
    def d1_exponent(self):
        return self.H - 1.5

    def to_dict(self):
        return {"type": "fbm", "hurst": self.H}


@dataclass(frozen=True)
class FbmLowKernel(Kernel):
    """fBm kernel for H < 1/2."""

    hurst: HurstExponent = None
    const: float = field(init=False, repr=False, compare=False)

    kind = "fbm"

    def __post_init__(self):
        h = _hurst(self.hurst)
        if h.regime != "low":
            raise UnsupportedRegimeError(f"FbmLow needs H < 1/2, got {h.value}", "kernels.FbmLowKernel")
        object.__setattr__(self, "hurst", h)
        object.__setattr__(self, "const", fbm_constant_low(h.value))

    @property
    def H(self):
        return self.hurst.value

    @property
    def origin_exponent(self):
        return self.H - 0.5

    @property
    def diag_exponent(self):
        return self.H - 0.5

    def _inner(self, s, t):
        """``int_s^t u**(H-3/2) (u-s)**(H-1/2) du``.

        Split at ``u = 2s``: the near part carries the endpoint singularity
        (power substitution), the far part decays like ``u**(2H-2)`` over
        possibly many decades and is integrated in ``y = log(u/s)``.
        """
        h = self.H
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        mid = np.minimum(2.0 * s, t)
        near = integrate(lambda u: u ** (h - 1.5), s, mid, config=self._inner_quad,
                         weight_exponent=h - 0.5)
        far = integrate(lambda y: np.exp(y * (h - 0.5)) * np.expm1(y) ** (h - 0.5),
                        np.log(mid / s), np.log(t / s), config=self._inner_quad)
        return near + s ** (2 * h - 1) * far

    def _eval(self, t, s):
        h = self.H
        direct = (t / s) ** (h - 0.5) * (t - s) ** (h - 0.5)
        return self.const * (direct + (0.5 - h) * s ** (0.5 - h) * self._inner(s, t))

    def reduced(self, r):
        """Scale-free part: ``K(t, s) = const * s**(H-1/2) * reduced(t/s)``."""
        h = self.H
        r = np.asarray(r, float)
        return r ** (h - 0.5) * (r - 1.0) ** (h - 0.5) + (0.5 - h) * self._inner(np.ones_like(r), r)

    def to_dict(self):
        return {"type": "fbm", "hurst": self.H}


def fbm_kernel(h, **kw):
    """fBm kernel for either regime."""
    h = _hurst(h)
    if h.regime == "high":
        return FbmHighKernel(h, **kw)
    if h.regime == "low":
        return FbmLowKernel(h, **kw)
    raise DomainError("fBm with H = 1/2 is Brownian motion; use a constant kernel with c = 1",
                      "kernels.fbm_kernel")


@dataclass(frozen=True)
class StdOUKernel(Kernel):
    """``exp(alpha (t - s))``."""

    alpha: float = 0.0

    kind = "std_ou"
    stationary = True

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))

    def _eval(self, t, s):
        return np.exp(self.alpha * (t - s))

    def _prim(self, x, scale):
        # int_0^x exp(scale * y) dy
        return x if scale == 0 else np.expm1(scale * x) / scale

    def integral_s(self, t, a, b):
        t, a, b = (np.asarray(x, float) for x in (t, a, b))
        return self._prim(t - a, self.alpha) - self._prim(t - b, self.alpha)

    def integral_t(self, s, a, b):
        s, a, b = (np.asarray(x, float) for x in (s, a, b))
        return self._prim(b - s, self.alpha) - self._prim(a - s, self.alpha)

    def square_integral(self, t, a, b):
        t, a, b = (np.asarray(x, float) for x in (t, a, b))
        return self._prim(t - a, 2 * self.alpha) - self._prim(t - b, 2 * self.alpha)

    def to_dict(self):
        return {"type": "std_ou", "alpha": self.alpha}


@dataclass(frozen=True)
class VolterraOUKernel(Kernel):
    """Kernel of ``Y`` solving ``dY = alpha Y dt + dZ`` with ``Z`` Volterra.

    When the base kernel vanishes on the diagonal and has an integrable
    derivative (RL or fBm with H > 1/2) the single-integral form
    ``int_s^t exp(alpha (t-u)) dK_Z/du(u, s) du`` is used; otherwise
    ``alpha int_s^t exp(alpha (t-u)) K_Z(u, s) du + K_Z(t, s)``.
    """

    alpha: float = 0.0
    base: Kernel = None

    kind = "volterra_ou"

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        if not isinstance(self.base, Kernel):
            raise PreconditionError("VolterraOU needs a base kernel", "kernels.VolterraOUKernel")
        if isinstance(self.base, (VolterraOUKernel, StdOUKernel)):
            raise PreconditionError("VolterraOU base must not itself be an OU kernel",
                                    "kernels.VolterraOUKernel")

    @property
    def stationary(self):
        return self.base.stationary

    @property
    def origin_exponent(self):
        return self.base.origin_exponent

    @property
    def diag_exponent(self):
        return self.base.diag_exponent

    def _eval(self, t, s):
        if self.base.supports_diff:
            return self.eval_diff(t, s)
        return self.eval_integral(t, s)

    def eval_integral(self, t, s):
        a, base = self.alpha, self.base
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        beta = min(base.diag_exponent, 0.0)
        if a == 0.0:
            return base._eval(t, s)

        def f(u, tt, ss):
            reg = base._eval(u, ss)
            if beta < 0:
                reg = reg * (u - ss) ** (-beta)
            return a * np.exp(a * (tt - u)) * reg

        conv = integrate(f, s, t, t, s, config=self.quad,
                         weight_exponent=beta if beta < 0 else None)
        return conv + base._eval(t, s)

    def eval_diff(self, t, s):
        a, base = self.alpha, self.base
        if not base.supports_diff:
            raise UnsupportedRegimeError(
                "derivative form needs a base kernel vanishing on the diagonal with H > 1/2",
                "kernels.ou_kernel_diff")
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        return integrate(lambda u, tt, ss: np.exp(a * (tt - u)) * base.d1_regular(u, ss),
                         s, t, t, s, config=self.quad, weight_exponent=base.d1_exponent)

    def to_dict(self):
        return {"type": "volterra_ou", "alpha": self.alpha, "base": self.base.to_dict()}


# serialisation ---------------------------------------------------------------

def kernel_from_dict(d, quad=DEFAULT_CONFIG):
    """Build a kernel from its JSON object."""
    kind = d.get("type")
    if kind == "constant":
        return ConstantKernel(d.get("c", 1.0), quad=quad)
    if kind == "rl":
        return RiemannLiouvilleKernel(d["hurst"], quad=quad)
    if kind == "fbm":
        return fbm_kernel(d["hurst"], quad=quad)
    if kind == "std_ou":
        return StdOUKernel(d["alpha"], quad=quad)
    if kind == "volterra_ou":
        return VolterraOUKernel(d["alpha"], kernel_from_dict(d["base"], quad), quad=quad)
    raise DomainError(f"unknown kernel type {kind!r}", "kernels.kernel_from_dict")


def kernel_to_dict(kernel):
    return kernel.to_dict()


# operations ------------------------------------------------------------------

def rl_kernel(H, t, s):
    """Riemann-Liouville kernel ``(t-s)**(H-1/2) / Gamma(H+1/2)``."""
    return RiemannLiouvilleKernel(H)(t, s)


def fbm_kernel_high(H, t, s, quad=DEFAULT_CONFIG):
    """fBm kernel for H > 1/2."""
    return FbmHighKernel(H, quad=quad)(t, s)


def fbm_kernel_low(H, t, s, quad=DEFAULT_CONFIG):
    """fBm kernel for H < 1/2."""
    return FbmLowKernel(H, quad=quad)(t, s)


def _ou_args(t, s, base, where):
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    if np.any(s > t) or np.any(s < 0):
        raise DomainError("need 0 <= s <= t", where)
    if base.diag_exponent < 0 and np.any(s == t):
        raise SingularPointError("base kernel is singular at s = t", where)
    if base.origin_exponent < 0 and np.any(s == 0):
        raise DomainError("base kernel is not defined at s = 0", where)
    return t, s


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def ou_kernel(alpha, base, t, s):
    """Volterra-OU kernel via ``alpha int_s^t e^{alpha(t-u)} K_Z(u,s) du + K_Z(t,s)``."""
    k = VolterraOUKernel(alpha, base, quad=base.quad)
    t, s = _ou_args(t, s, base, "kernels.ou_kernel")
    return _scalar(k.eval_integral(t, s))


def ou_kernel_diff(alpha, base, t, s):
    """Volterra-OU kernel via ``int_s^t e^{alpha(t-u)} dK_Z/du(u,s) du``."""
    if not base.supports_diff:
        raise UnsupportedRegimeError(
            f"derivative form unsupported for base {base.to_dict()}", "kernels.ou_kernel_diff")
    k = VolterraOUKernel(alpha, base, quad=base.quad)
    t, s = _ou_args(t, s, base, "kernels.ou_kernel_diff")
    return _scalar(k.eval_diff(t, s))


def l2_segment(kernel, a, b, T):
    """``int_a^b K(T, u)**2 du``."""
    a, b, T = np.broadcast_arrays(*(np.asarray(x, float) for x in (a, b, T)))
    if np.any(a > b) or np.any(a < 0) or np.any(b > T):
        raise DomainError("need 0 <= a <= b <= T", "kernels.l2_segment")
    return _scalar(kernel.square_integral(T, a, b))


def increment_variance(kernel, s, t):
    """``E|Z_t - Z_s|**2`` for ``Z_t = int_0^t K(t, u) dW_u``."""
    s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
    if np.any(s > t) or np.any(s < 0):
        raise DomainError("need 0 <= s <= t", "kernels.increment_variance")
    # the squared difference blows up like the squared kernel at u = 0 and u = s
    diff = endpoint_integral(lambda u, tt, ss: (kernel._eval(tt, u) - kernel._eval(ss, u)) ** 2,
                             0.0, s, t, s, config=kernel.quad,
                             left_exp=2 * kernel.origin_exponent, right_exp=2 * kernel.diag_exponent)
    return _scalar(diff + kernel.square_integral(t, s, t))


def flow_kernel(kernel, t, Tj, Tk):
    """Delivery-period average ``(1/(Tk-Tj)) int_Tj^Tk K(T, t) dT``."""
    t, Tj, Tk = np.broadcast_arrays(*(np.asarray(x, float) for x in (t, Tj, Tk)))
    if np.any(Tj >= Tk):
        raise DomainError("need Tj < Tk", "kernels.flow_kernel")
    if np.any(t > Tj) or np.any(t < 0):
        raise DomainError("need 0 <= t <= Tj", "kernels.flow_kernel")
    return _scalar(kernel.integral_t(t, Tj, Tk) / (Tk - Tj))


def check_square_integrable(kernel, horizon, n_probe=4):
    """Check ``int_0^t K(t, s)**2 ds < inf`` for ``t`` up to ``horizon``.

    The endpoint exponents must keep ``K**2`` integrable and the kernel must
    be finite on an interior probe grid.
    """
    where = "kernels.check_square_integrable"
    if 2 * kernel.origin_exponent <= -1 or 2 * kernel.diag_exponent <= -1:
        raise DomainError("kernel endpoint singularity is not square integrable", where)
    frac = np.arange(1, n_probe + 1) / (n_probe + 1)
    t = horizon * np.arange(1, n_probe + 1) / n_probe
    tt, ff = np.meshgrid(t, frac, indexing="ij")
    vals = kernel._eval(tt, tt * ff)
    if not np.all(np.isfinite(vals)):
        raise DomainError("kernel is not finite on the probe grid", where)
    return vals
