"""Vectorised Gauss-Legendre quadrature on geometrically graded panels.

Kernel integrals in this package have algebraic endpoint behaviour such as
``(u - s)**beta`` with ``beta > -1``.  Two tools handle them:

* a graded panel mesh that clusters panels geometrically towards the
  endpoints, so mild singularities cost only a few extra panels;
* an optional power substitution ``v = (u - a)**(1 + beta)`` that removes a
  known left-endpoint factor ``(u - a)**beta`` exactly.

All routines integrate many intervals at once: ``a``, ``b`` and any extra
parameters broadcast against each other and the integrand is called with
2-d arrays of shape ``(n_intervals, n_nodes)``.
"""
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericalError, QuadratureWarning

# rows * nodes per integrand call; keeps nested integrals within memory
_CHUNK = 1 << 21


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances and budget for :func:`integrate`.

    Parameters
    ----------
    abs_tol, rel_tol : float
        An interval is converged once two successive refinements differ by
        at most ``max(abs_tol, rel_tol * |I|)``.
    max_panels : int
        Upper bound on Gauss panels per interval.  Hitting it emits a
        :class:`QuadratureWarning` and returns the last estimate.
    singularity_handling : bool
        Apply the power substitution for known endpoint singularities.  When
        off, the raw integrand is integrated on a deeper graded mesh.
    order : int
        Gauss-Legendre nodes per panel.
    grading_depth : int
        Number of geometric levels towards each graded endpoint.
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_panels: int = 4096
    singularity_handling: bool = True
    order: int = 8
    grading_depth: int = 30

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_panels < 1:
            raise ValueError("max_panels must be >= 1")
        if self.order < 1 or self.grading_depth < 0:
            raise ValueError("order must be >= 1 and grading_depth >= 0")


DEFAULT_CONFIG = QuadratureConfig()

# depth used for raw (unsubstituted) singular integrands
_RAW_DEPTH = 60


def graded_edges(depth, grade):
    """Panel edges on [0, 1], refined geometrically towards graded ends."""
    if grade == "none" or depth == 0:
        return np.array([0.0, 1.0])
    if grade == "left":
        return np.concatenate([[0.0], 2.0 ** -np.arange(depth, -1, -1)])
    if grade == "right":
        return 1.0 - graded_edges(depth, "left")[::-1]
    if grade == "both":
        left = 0.5 * 2.0 ** -np.arange(depth, -1, -1)
        right = 1.0 - left[::-1][1:]
        return np.concatenate([[0.0], left, right, [1.0]])
    raise ValueError(f"unknown grading {grade!r}")


@lru_cache(maxsize=64)
def _reference_rule(order, depth, grade, split):
    edges = graded_edges(depth, grade)
    if split > 1:
        frac = np.arange(split) / split
        lo, hi = edges[:-1], edges[1:]
        edges = np.append((lo[:, None] + (hi - lo)[:, None] * frac).ravel(), 1.0)
    x, w = np.polynomial.legendre.leggauss(order)
    lo, width = edges[:-1], np.diff(edges)
    nodes = (lo[:, None] + width[:, None] * (x + 1.0) / 2.0).ravel()
    weights = (width[:, None] * w / 2.0).ravel()
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights, len(lo)


def _apply(func, lo, length, params, nodes, weights):
    out = np.empty(lo.shape[0])
    rows = max(1, _CHUNK // nodes.size)
    for start in range(0, lo.shape[0], rows):
        sl = slice(start, start + rows)
        u = lo[sl, None] + length[sl, None] * nodes
        vals = func(u, *(p[sl, None] for p in params))
        vals = np.broadcast_to(vals, u.shape)
        out[sl] = length[sl] * (vals @ weights)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite integrand value", "quadrature.integrate")
    return out


def integrate(func, a, b, *params, config=DEFAULT_CONFIG, grade="both",
              weight_exponent=None):
    """Integrate ``func`` over ``[a, b]`` for a batch of intervals.

    Parameters
    ----------
    func : callable
        ``func(u, *params)`` evaluated on arrays of shape ``(rows, nodes)``;
        each entry of ``params`` arrives with shape ``(rows, 1)``.
    a, b : array_like
        Interval endpoints; broadcast with ``params``.
    config : QuadratureConfig
    grade : {"both", "left", "right", "none"}
        Endpoints towards which the panel mesh is graded.
    weight_exponent : float, optional
        If given, the integral computed is
        ``int_a^b func(u) * (u - a)**weight_exponent du``.  With singularity
        handling on and a negative exponent the factor is removed by the
        substitution ``v = (u - a)**(1 + weight_exponent)``.

    Returns
    -------
    ndarray
        Integral values with the broadcast shape of ``a``, ``b`` and params.
    """
    arrays = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float),
                                 *(np.asarray(p, float) for p in params))
    shape = arrays[0].shape
    a, b, *params = (np.ascontiguousarray(x).ravel() for x in arrays)
    length = b - a
    result = np.zeros(a.shape)
    todo = np.flatnonzero(length != 0.0)
    if todo.size == 0:
        return result.reshape(shape)

    depth = config.grading_depth
    beta = weight_exponent
    if beta is not None and beta < 0 and config.singularity_handling:
        # v = (u-a)^(1+beta): int_0^{L^(1+beta)} func(a + v^(1/(1+beta))) dv / (1+beta)
        g = beta + 1.0
        inner = func

        def func(v, lo, *p):
            return inner(lo + v ** (1.0 / g), *p) / g

        lo_all = np.zeros_like(a)
        len_all = np.abs(length) ** g * np.sign(length)
        params = [a] + params
    else:
        if beta is not None:
            inner = func

            def func(u, lo, *p):
                return inner(u, *p) * (u - lo) ** beta

            params = [a] + params
            if not config.singularity_handling:
                depth = max(depth, _RAW_DEPTH)
        lo_all, len_all = a, length

    split = 1
    nodes, weights, panels = _reference_rule(config.order, depth, grade, split)
    sub = [p[todo] for p in params]
    prev = _apply(func, lo_all[todo], len_all[todo], sub, nodes, weights)
    active = todo
    while True:
        split *= 2
        nodes, weights, panels = _reference_rule(config.order, depth, grade, split)
        sub = [p[active] for p in params]
        cur = _apply(func, lo_all[active], len_all[active], sub, nodes, weights)
        result[active] = cur
        tol = np.maximum(config.abs_tol, config.rel_tol * np.abs(cur))
        ok = np.abs(cur - prev) <= tol
        if ok.all():
            break
        if 2 * panels > config.max_panels:
            warnings.warn(f"quadrature budget of {config.max_panels} panels exhausted "
                          f"for {int((~ok).sum())} interval(s)", QuadratureWarning,
                          stacklevel=2)
            break
        active, prev = active[~ok], cur[~ok]
    return result.reshape(shape)


def gauss_cells(func, edges, *params, order=6):
    """Fixed-order Gauss-Legendre integral over each cell of ``edges``.

    Cheap rule for smooth integrands on many short cells; ``func(u, *params)``
    receives arrays of shape ``(n_cells, order)``.
    """
    edges = np.asarray(edges, float)
    x, w = np.polynomial.legendre.leggauss(order)
    lo, width = edges[:-1], np.diff(edges)
    u = lo[:, None] + width[:, None] * (x + 1.0) / 2.0
    return func(u, *params) @ w * width / 2.0
