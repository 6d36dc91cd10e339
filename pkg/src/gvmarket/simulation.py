"""Monte Carlo simulation of spot, forwards and Girsanov densities.

Brownian increments are generated lazily in fixed-size blocks of paths.  Each
block has its own counter-based Philox stream keyed by
``(master_seed, stream, block)``, so results depend only on the seed, the
grid and the number of paths, never on how many threads run the blocks.

Wiener integrals ``int_0^t K(t, s) dW_s`` are discretised with cell-averaged
kernel weights ``(1/dt) int_cell K(t, s) ds``: this is the conditional
expectation of the integral given the grid increments and stays finite for
kernels that blow up at ``s = 0`` or ``s = t``.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, NumericalError
from .kernels import ConstantKernel, RiemannLiouvilleKernel, StdOUKernel, VolterraOUKernel
from .market import MarketSpec, PiecewiseConstantTheta, risk_neutral_seasonality

BLOCK_SIZE = 1024
_STREAM_INCREMENTS = 0
_STREAM_FBM = 1
_CLOSED_FORM = (ConstantKernel, RiemannLiouvilleKernel, StdOUKernel)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points starting at 0."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, float).ravel()
        if p.size < 2 or p[0] != 0.0:
            raise DomainError("time grid needs at least two points and must start at 0", "simulation.TimeGrid")
        if np.any(np.diff(p) <= 0):
            raise DomainError("time grid must be strictly increasing", "simulation.TimeGrid")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    @classmethod
    def uniform(cls, n_steps, horizon):
        if n_steps < 1 or not horizon > 0:
            raise DomainError("need n_steps >= 1 and a positive horizon", "simulation.TimeGrid")
        return cls(np.arange(n_steps + 1) * (horizon / n_steps))

    @property
    def dt(self):
        return np.diff(self.points)

    @property
    def n_steps(self):
        return self.points.size - 1

    @property
    def horizon(self):
        return float(self.points[-1])

    @property
    def is_uniform(self):
        dt = self.dt
        return bool(np.allclose(dt, dt[0], rtol=1e-12, atol=0))

    def index(self, times):
        """Grid indices of ``times``, which must be grid points."""
        times = np.atleast_1d(np.asarray(times, float))
        idx = np.searchsorted(self.points, times)
        idx = np.clip(idx, 0, self.points.size - 1)
        close = np.isclose(self.points[idx], times, rtol=1e-12, atol=1e-14)
        if not close.all():
            raise DomainError("requested times are not grid points", "simulation.TimeGrid.index")
        return idx

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int

    def __post_init__(self):
        s = int(self.master_seed)
        if not 0 <= s < 2 ** 64:
            raise DomainError("master seed must be an unsigned 64-bit integer", "simulation.SeedSpec")
        object.__setattr__(self, "master_seed", s)

    def generator(self, stream, block):
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(stream, block))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_err: float
    n: int
    seed: int = None

    def to_dict(self):
        return {"mean": self.mean, "std_err": self.std_err, "n": self.n, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mean"]), float(d["std_err"]), int(d["n"]), d.get("seed"))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Recipe for Gaussian increments on a grid.

    Increments are regenerated on demand from the seed.  ``stride > 1``
    aggregates consecutive increments of ``base_grid``, giving coarser grids
    driven by the same Brownian path (common random numbers across
    refinement levels).
    """

    base_grid: TimeGrid
    n_paths: int
    n_factors: int
    seed: SeedSpec
    stride: int = 1
    threads: int = 1

    def __post_init__(self):
        where = "simulation.PathEnsemble"
        if self.n_paths < 1 or self.n_factors < 1:
            raise DomainError("need n_paths >= 1 and n_factors >= 1", where)
        if self.stride < 1 or self.base_grid.n_steps % self.stride:
            raise DomainError("stride must divide the number of base steps", where)
        if self.threads < 1:
            raise DomainError("need at least one thread", where)
        if not isinstance(self.seed, SeedSpec):
            object.__setattr__(self, "seed", SeedSpec(self.seed))

    @property
    def grid(self):
        if self.stride == 1:
            return self.base_grid
        return TimeGrid(self.base_grid.points[::self.stride])

    @property
    def n_blocks(self):
        return -(-self.n_paths // BLOCK_SIZE)

    def coarsen(self, factor):
        return replace(self, stride=self.stride * int(factor))

    def with_threads(self, threads):
        return replace(self, threads=int(threads))

    def block_slice(self, b):
        return slice(b * BLOCK_SIZE, min((b + 1) * BLOCK_SIZE, self.n_paths))

    def block_increments(self, b):
        """Increments of block ``b``: shape ``(paths_in_block, steps, factors)``."""
        sl = self.block_slice(b)
        rng = self.seed.generator(_STREAM_INCREMENTS, b)
        steps = self.base_grid.n_steps
        z = rng.standard_normal((sl.stop - sl.start, steps, self.n_factors))
        z *= np.sqrt(self.base_grid.dt)[None, :, None]
        if self.stride > 1:
            z = z.reshape(z.shape[0], steps // self.stride, self.stride, self.n_factors).sum(axis=2)
        return z

    def map_blocks(self, fn):
        """``[fn(b, increments_b) for b in blocks]`` evaluated on ``threads`` workers."""
        def work(b):
            return fn(b, self.block_increments(b))
        if self.threads == 1 or self.n_blocks == 1:
            return [work(b) for b in range(self.n_blocks)]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(work, range(self.n_blocks)))

    def increments(self):
        """All increments, shape ``(n_paths, steps, factors)``."""
        return np.concatenate(self.map_blocks(lambda b, dw: dw), axis=0)


def sample_increments(grid, n_paths, n_factors, seed, threads=1):
    """Gaussian increments ``N(0, dt_k)`` per (path, step, factor)."""
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(grid)
    return PathEnsemble(grid, int(n_paths), int(n_factors), seed, threads=threads)


# kernel weights -----------------------------------------------------------------------

def cell_averages(kernel, t, lo, hi):
    """``(1/(hi-lo)) int_lo^hi K(t, s) ds`` for arrays of cells with ``hi <= t``.

    Closed forms are used where available.  Otherwise cells touching ``s = 0``
    or ``s = t`` go through adaptive graded quadrature and interior cells
    use a 6-point Gauss rule.
    """
    t, lo, hi = np.broadcast_arrays(*(np.asarray(x, float) for x in (t, lo, hi)))
    width = hi - lo
    if isinstance(kernel, _CLOSED_FORM):
        return kernel.integral_s(t, lo, hi) / width
    out = np.empty(t.shape)
    edge = (lo == 0) | (hi >= t)
    if edge.any():
        out[edge] = kernel.integral_s(t[edge], lo[edge], hi[edge]) / width[edge]
    inner = ~edge
    if inner.any():
        ti, li, hi_ = t[inner], lo[inner], hi[inner]
        x, w = np.polynomial.legendre.leggauss(6)
        u = li[:, None] + (hi_ - li)[:, None] * (x + 1) / 2
        out[inner] = kernel._eval(ti[:, None], u) @ w / 2
    return out


def weight_matrix(kernel, grid, out_idx):
    """Weights ``W[o, l]`` so that ``int_0^{t_o} K(t_o, s) dW_s ~ sum_l W[o, l] dW_l``."""
    pts = grid.points
    n_cells = grid.n_steps
    out_idx = np.asarray(out_idx)
    W = np.zeros((out_idx.size, n_cells))
    if kernel.stationary and grid.is_uniform:
        # weights depend only on the lag k - l
        dt = pts[1]
        kmax = int(out_idx.max()) if out_idx.size else 0
        if kmax == 0:
            return W
        j = np.arange(1, kmax + 1)
        T = kmax * dt
        lag = cell_averages(kernel, T, T - j * dt, T - (j - 1) * dt)
        for r, k in enumerate(out_idx):
            if k > 0:
                W[r, :k] = lag[:k][::-1]
        return W
    rows, cols = [], []
    for r, k in enumerate(out_idx):
        rows.append(np.full(k, r))
        cols.append(np.arange(k))
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    cols = np.concatenate(cols) if cols else np.zeros(0, int)
    if rows.size:
        t = pts[out_idx][rows]
        W[rows, cols] = cell_averages(kernel, t, pts[cols], pts[cols + 1])
    return W


def forward_weights(kernel, grid, Tj):
    """``(1/dt_l) int_cell K(Tj, s) ds`` for every cell of the grid (``t_l < Tj``)."""
    pts = grid.points
    return cell_averages(kernel, Tj, pts[:-1], pts[1:])


# paths -------------------------------------------------------------------------------

def _out_index(grid, at, upper=None):
    if at is None:
        idx = np.arange(grid.points.size)
        if upper is not None:
            idx = idx[grid.points <= upper * (1 + 1e-12)]
        return idx
    return grid.index(at)


def _check_measure(measure):
    if measure not in ("P", "Q"):
        raise DomainError("measure must be 'P' or 'Q'", "simulation")


def spot_paths(market, ensemble, measure="Q", at=None):
    """Spot prices ``S_t`` on grid times (or the subset ``at``).

    Under ``Q`` the increments represent ``W^Q`` and the seasonality is
    ``phi_Q``; under ``P`` they represent ``W`` and the seasonality is ``phi``.

    Returns
    -------
    ndarray, shape (n_paths, n_times)
    """
    _check_measure(measure)
    grid = ensemble.grid
    if grid.horizon > market.horizon * (1 + 1e-12):
        raise DomainError("grid extends beyond the market horizon", "simulation.spot_paths")
    if ensemble.n_factors != market.n:
        raise DomainError("ensemble factor count differs from the market", "simulation.spot_paths")
    idx = _out_index(grid, at)
    times = grid.points[idx]
    season = (risk_neutral_seasonality(market, times) if measure == "Q"
              else np.asarray(market.seasonality(times), float))
    weights = [weight_matrix(k, grid, idx).T for k in market.factors]

    def block(b, dw):
        out = np.zeros((dw.shape[0], idx.size))
        for i, W in enumerate(weights):
            out += dw[:, :, i] @ W
        return out + season

    return np.concatenate(ensemble.map_blocks(block), axis=0)


def _theta_cells(theta, grid):
    """Left-point theta per cell, shape (steps, n)."""
    return theta(grid.points[:-1])


def forward_paths(market, Tj, ensemble, measure="Q", at=None):
    """Forward prices ``F(t, Tj)`` on grid times in ``[0, Tj]``.

    Under ``Q``: ``dF = K(Tj, t) . dW^Q``.  Under ``P``:
    ``dF = K(Tj, t) . theta_t dt + K(Tj, t) . dW``.
    """
    _check_measure(measure)
    if not any(math.isclose(Tj, T, rel_tol=1e-12) for T in market.maturities):
        raise DomainError(f"{Tj} is not a traded maturity", "simulation.forward_paths")
    grid = ensemble.grid
    if grid.horizon > Tj * (1 + 1e-12):
        raise DomainError("grid extends beyond the forward maturity", "simulation.forward_paths")
    idx = _out_index(grid, at, upper=Tj)
    F0 = risk_neutral_seasonality(market, Tj)
    w = np.stack([forward_weights(k, grid, Tj) for k in market.factors], axis=1)  # (steps, n)
    drift = None
    if measure == "P":
        drift = np.sum(w * _theta_cells(market.theta, grid), axis=1) * grid.dt

    def block(b, dw):
        incr = np.einsum("psf,sf->ps", dw, w)
        if drift is not None:
            incr = incr + drift
        path = np.concatenate([np.full((dw.shape[0], 1), F0), F0 + np.cumsum(incr, axis=1)], axis=1)
        return path[:, idx]

    return np.concatenate(ensemble.map_blocks(block), axis=0)


def girsanov_density(theta, grid, ensemble, at=None):
    """Density ``Z_t = exp(-sum theta . dW - 1/2 sum |theta|^2 dt)`` under ``P``."""
    if isinstance(theta, MarketSpec):
        theta = theta.theta
    if not isinstance(theta, PiecewiseConstantTheta):
        theta = PiecewiseConstantTheta.constant(theta)
    if grid is None:
        grid = ensemble.grid
    if grid != ensemble.grid:
        raise DomainError("grid differs from the ensemble grid", "simulation.girsanov_density")
    idx = _out_index(grid, at)
    th = _theta_cells(theta, grid)
    comp = 0.5 * np.concatenate([[0.0], np.cumsum(np.sum(th * th, axis=1) * grid.dt)])

    def block(b, dw):
        stoch = np.concatenate([np.zeros((dw.shape[0], 1)),
                                np.cumsum(np.einsum("psf,sf->ps", dw, th), axis=1)], axis=1)
        return np.exp(-stoch - comp)[:, idx]

    return np.concatenate(ensemble.map_blocks(block), axis=0)


def fbm_covariance(H, times):
    t = np.asarray(times, float)
    s, u = np.meshgrid(t, t, indexing="ij")
    return 0.5 * (s ** (2 * H) + u ** (2 * H) - np.abs(s - u) ** (2 * H))


def fbm_paths_exact(H, grid, n_paths, seed, threads=1):
    """Exact fBm samples on the grid via a Cholesky factor of the covariance.

    Returns
    -------
    ndarray, shape (n_paths, len(grid)); column 0 is zero.
    """
    if not 0 < H < 1:
        raise DomainError("H must lie in (0, 1)", "simulation.fbm_paths_exact")
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(grid)
    if grid.points.size > 2049:
        raise DomainError("exact fBm sampling supports at most 2048 steps", "simulation.fbm_paths_exact")
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(seed)
    cov = fbm_covariance(H, grid.points[1:])
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"fBm covariance not positive definite: {exc}",
                             "simulation.fbm_paths_exact") from None
    n = grid.points.size - 1
    n_blocks = -(-n_paths // BLOCK_SIZE)

    def work(b):
        rows = min((b + 1) * BLOCK_SIZE, n_paths) - b * BLOCK_SIZE
        z = seed.generator(_STREAM_FBM, b).standard_normal((rows, n))
        return np.concatenate([np.zeros((rows, 1)), z @ L.T], axis=1)

    if threads == 1:
        blocks = [work(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(work, range(n_blocks)))
    return np.concatenate(blocks, axis=0)


def mc_estimate(values, seed=None):
    """Sample mean and standard error ``std / sqrt(n)``."""
    v = np.asarray(values, float).ravel()
    if v.size < 2:
        raise DomainError("need at least two samples", "simulation.mc_estimate")
    mean = float(np.sum(v) / v.size)
    var = float(np.sum((v - mean) ** 2) / (v.size - 1))
    return MCEstimate(mean, math.sqrt(var / v.size), int(v.size),
                      None if seed is None else int(getattr(seed, "master_seed", seed)))


def ou_path_equivalence(alpha, base, grid, ensemble, return_paths=False):
    """Compare two discretisations of ``dY = alpha Y dt + dZ`` on the same increments.

    (a) kernel route: ``Y_t = int K_Y(t, s) dW_s`` with the Volterra-OU kernel;
    (b) Langevin route: Euler steps ``Y_{k+1} = Y_k + alpha Y_k dt + dZ_k`` with
    ``Z`` built from the base kernel.

    Returns the maximum absolute difference over paths and grid times.
    """
    if grid is None:
        grid = ensemble.grid
    if grid != ensemble.grid:
        raise DomainError("grid differs from the ensemble grid", "simulation.ou_path_equivalence")
    if ensemble.n_factors != 1:
        raise DomainError("ensemble must have a single factor", "simulation.ou_path_equivalence")
    idx = np.arange(grid.points.size)
    kY = VolterraOUKernel(alpha, base, quad=base.quad)
    WY = weight_matrix(kY, grid, idx).T
    WZ = weight_matrix(base, grid, idx).T
    dt = grid.dt

    def block(b, dw):
        x = dw[:, :, 0]
        y_kernel = x @ WY
        z = x @ WZ
        y = np.zeros_like(z)
        for k in range(grid.n_steps):
            y[:, k + 1] = y[:, k] * (1.0 + alpha * dt[k]) + z[:, k + 1] - z[:, k]
        return np.max(np.abs(y - y_kernel)) if not return_paths else (y_kernel, y)

    res = ensemble.map_blocks(block)
    if return_paths:
        return (np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res]))
    return float(max(res))
