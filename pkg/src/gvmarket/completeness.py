"""Market completeness: left-invertibility of the kernel matrix over time.

The market trading ``m`` forwards on ``n`` factors is complete iff the
``m x n`` kernel matrix ``K-bar(t)`` has a left inverse for almost every
``t`` in the trading window.  ``scan`` checks this on a grid, counts sign
changes of the determinant (square case) and localises isolated zeros.
"""
import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PreconditionError
from .kernels import (FbmHighKernel, RiemannLiouvilleKernel, StdOUKernel,
                      VolterraOUKernel)
from .market import MarketSpec, kernel_matrices, left_inverse_matrix

DEGENERACY_TOL = 1e-12
BISECTION_TOL = 1e-9
DEFAULT_POINTS = 1024
GRID_START = 1e-6


def left_inverse(kmat):
    """Left inverse ``(K^T K)^{-1} K^T`` of an ``m x n`` kernel matrix.

    Raises
    ------
    IncompletenessError
        If the matrix is rank deficient; the error carries the time.
    """
    return left_inverse_matrix(kmat, rank_tol=DEGENERACY_TOL, where="completeness.left_inverse")


# generalised Vandermonde ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VandermondeCase:
    """Exponents ``alpha_1 < ... < alpha_n`` and points ``0 < x_1 < ... < x_n``."""

    exponents: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.exponents, float).ravel()
        x = np.asarray(self.points, float).ravel()
        where = "completeness.VandermondeCase"
        if a.size != x.size or a.size == 0:
            raise DomainError("need equally many exponents and points", where)
        if np.any(np.diff(a) <= 0) or np.any(np.diff(x) <= 0):
            raise DomainError("exponents and points must be strictly increasing", where)
        if x[0] <= 0:
            raise DomainError("points must be positive", where)
        object.__setattr__(self, "exponents", a)
        object.__setattr__(self, "points", x)

    def matrix(self):
        """Row ``j`` holds ``x_j ** alpha_i`` for ``i = 1..n``."""
        return self.points[:, None] ** self.exponents[None, :]


def vandermonde_det(case):
    """Determinant of the generalised Vandermonde matrix ``[x_j ** alpha_i]``.

    Evaluated by LU factorisation after equilibrating rows and columns; the
    row and column scales are put back in log space so tiny or huge
    determinants do not under/overflow.
    """
    if not isinstance(case, VandermondeCase):
        case = VandermondeCase(*case)
    M = case.matrix()
    r = np.max(np.abs(M), axis=1)
    Ms = M / r[:, None]
    c = np.max(np.abs(Ms), axis=0)
    Ms = Ms / c[None, :]
    sign, logdet = np.linalg.slogdet(Ms)
    return float(sign * np.exp(logdet + np.log(r).sum() + np.log(c).sum()))


# scans ------------------------------------------------------------------------------

@dataclass
class CompletenessReport:
    """Outcome of a completeness scan.

    ``determinant`` is filled only for square kernel matrices;
    ``min_singular_value`` always.  ``degenerate_times`` holds bisection-
    refined zeros and grid points flagged as numerically singular.
    """

    grid: list
    min_singular_value: list
    determinant: list = None
    zero_crossings: int = 0
    degenerate_times: list = field(default_factory=list)
    verdict: str = "complete"

    def to_dict(self):
        return {"grid": list(self.grid), "min_singular_value": list(self.min_singular_value),
                "determinant": None if self.determinant is None else list(self.determinant),
                "zero_crossings": self.zero_crossings,
                "degenerate_times": list(self.degenerate_times), "verdict": self.verdict}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self):
        values = self.determinant if self.determinant is not None else self.min_singular_value
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "det_or_min_sv"])
        for t, v in zip(self.grid, values):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()

    @property
    def is_complete(self):
        return self.verdict != "incomplete"


def default_grid(market, n_points=DEFAULT_POINTS, end=None):
    """Uniform grid on ``[1e-6, end]``; ``end`` defaults to ``T_1``, pulled in
    slightly when a factor kernel is singular on the diagonal."""
    T1 = market.maturities[0]
    if end is None:
        singular = any(k.diag_exponent < 0 for k in market.factors)
        end = T1 * (1 - 1e-6) if singular else T1
    return np.linspace(GRID_START, end, n_points)


def _normalised(mats):
    """Scale-free determinant or smallest singular value per matrix."""
    sv = np.linalg.svd(mats, compute_uv=False)
    m, n = mats.shape[-2:]
    row_norms = np.prod(np.linalg.norm(mats, axis=-1), axis=-1)
    if m == n:
        det = np.linalg.det(mats)
        with np.errstate(divide="ignore", invalid="ignore"):
            flagged = ~(np.abs(det) >= DEGENERACY_TOL * row_norms)
        return det, sv[..., -1], flagged
    with np.errstate(divide="ignore", invalid="ignore"):
        flagged = ~(sv[..., -1] > DEGENERACY_TOL * sv[..., 0]) if m > n else np.ones(len(mats), bool)
    return None, sv[..., -1], flagged


def _bisect(f, a, b, fa):
    while b - a > BISECTION_TOL:
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0:
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def scan_matrices(grid, mats, det_fn=None):
    """Build a report from precomputed kernel matrices ``mats[k]`` at ``grid[k]``."""
    grid = np.asarray(grid, float)
    mats = np.asarray(mats, float)
    det, min_sv, flagged = _normalised(mats)
    m, n = mats.shape[-2:]
    degenerate = []
    crossings = 0
    if det is not None:
        sgn = np.sign(det)
        nz = np.flatnonzero(sgn != 0)
        for i, j in zip(nz[:-1], nz[1:]):
            if sgn[i] != sgn[j]:
                crossings += 1
                if det_fn is not None and j == i + 1:
                    degenerate.append(_bisect(det_fn, grid[i], grid[j], det[i]))
                else:
                    degenerate.append(0.5 * (grid[i] + grid[j]))
    spacing = float(np.max(np.diff(grid))) if grid.size > 1 else 0.0
    for k in np.flatnonzero(flagged):
        t = float(grid[k])
        if all(abs(t - d) > spacing for d in degenerate):
            degenerate.append(t)
    degenerate = sorted(float(d) for d in degenerate)

    # persistent degeneracy: three or more consecutive flagged grid points
    run = longest = 0
    for f in flagged:
        run = run + 1 if f else 0
        longest = max(longest, run)
    if m < n or longest >= 3 or (len(grid) and flagged.all()):
        verdict = "incomplete"
    elif degenerate:
        verdict = "complete-except-null-set"
    else:
        verdict = "complete"
    return CompletenessReport(
        grid=grid.tolist(), min_singular_value=min_sv.tolist(),
        determinant=None if det is None else det.tolist(),
        zero_crossings=crossings, degenerate_times=degenerate, verdict=verdict)


def scan(market, grid=None, n_points=DEFAULT_POINTS):
    """Check left-invertibility of ``K-bar(t)`` along a grid in ``(0, T_1]``."""
    if grid is None:
        grid = default_grid(market, n_points)
    grid = np.asarray(grid, float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be strictly increasing", "completeness.scan")
    T1 = market.maturities[0]
    if grid[-1] > T1 or grid[0] < 0:
        raise DomainError("grid must lie in [0, T_1]", "completeness.scan")
    for k in market.factors:
        if k.diag_exponent < 0 and grid[-1] >= T1:
            raise DomainError("grid hits the kernel singularity at t = T_1", "completeness.scan")
        if k.origin_exponent < 0 and grid[0] <= 0:
            raise DomainError("grid hits the kernel singularity at t = 0", "completeness.scan")
    mats = kernel_matrices(market, grid)
    bad = np.flatnonzero(~np.isfinite(mats).all(axis=(1, 2)))
    if bad.size:
        raise DomainError(f"non-finite kernel matrix at grid index {int(bad[0])}", "completeness.scan")
    det_fn = None
    if market.m == market.n:
        def det_fn(t):
            return float(np.linalg.det(kernel_matrices(market, np.array([t]))[0]))
    return scan_matrices(grid, mats, det_fn)


# two-factor analytic checks ----------------------------------------------------------

@dataclass
class AnalyticCheck:
    family: str
    passed: bool
    min_abs_det: float
    samples: int


def _family_kernels(family, p):
    where = "completeness.two_factor_analytic_check"
    if family in ("rl_ou", "fou"):
        h1, h2 = p["H1"], p["H2"]
        alpha = p.get("alpha", 0.0)
        if not 0.5 < h1 < h2 < 1:
            raise PreconditionError("needs 1/2 < H1 < H2 < 1", where)
        base = RiemannLiouvilleKernel if family == "rl_ou" else FbmHighKernel
        return [VolterraOUKernel(alpha, base(h1)), VolterraOUKernel(alpha, base(h2))]
    if family == "mixed":
        a1, a2, h = p["alpha1"], p["alpha2"], p["H"]
        if not a1 <= a2:
            raise PreconditionError("needs alpha1 <= alpha2", where)
        if not 0.5 < h < 1:
            raise PreconditionError("needs 1/2 < H < 1", where)
        return [StdOUKernel(a1), VolterraOUKernel(a2, FbmHighKernel(h))]
    raise DomainError(f"unknown family {family!r}", where)


def two_factor_analytic_check(family, params, n_samples=50, seed=0):
    """Sample ``s`` in ``(0, T_1)`` and confirm the 2x2 kernel determinant is nonzero.

    Parameters
    ----------
    family : {"rl_ou", "fou", "mixed"}
    params : dict
        ``rl_ou``/``fou``: ``alpha``, ``H1``, ``H2``; ``mixed``: ``alpha1``,
        ``alpha2``, ``H``.  All need ``T1 < T2``.
    """
    kernels = _family_kernels(family, params)
    T1, T2 = params.get("T1", 1.0), params.get("T2", 2.0)
    if not 0 < T1 < T2:
        raise PreconditionError("needs 0 < T1 < T2", "completeness.two_factor_analytic_check")
    market = MarketSpec(kernels, (T1, T2))
    rng = np.random.default_rng(seed)
    s = np.sort(rng.uniform(0.0, T1, n_samples))
    s = s[s > 0]
    mats = kernel_matrices(market, s)
    dets = np.linalg.det(mats)
    scale = np.prod(np.linalg.norm(mats, axis=-1), axis=-1)
    ok = np.all(np.isfinite(dets)) and np.all(np.abs(dets) > DEGENERACY_TOL * scale)
    return AnalyticCheck(family, bool(ok), float(np.min(np.abs(dets))), int(s.size))
