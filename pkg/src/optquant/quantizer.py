"""Quadratic optimal quantizers of scalar laws.

A grid ``x_1 < ... < x_N`` induces Voronoi cells ``(x_{i-1/2}, x_{i+1/2}]``
whose outer endpoints are the support bounds.  All cell quantities (mass,
first and second moments) come from the closed forms in
:mod:`optquant.distrib`, so the distortion, its gradient and its
tridiagonal Hessian are exact up to floating point.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg

from .distrib import Distribution

__all__ = [
    "InvalidGridError",
    "DegenerateCellError",
    "QuantizerGrid",
    "DistortionResult",
    "OptimizeConfig",
    "OptimizeReport",
    "cell_bounds",
    "distortion",
    "lloyd_step",
    "optimize",
    "brute_force_quantizer",
    "weights",
    "stationarity_residual",
    "local_distortions",
    "local_behavior_table",
    "lp_distortion",
    "weighted_distortion",
]


class InvalidGridError(ValueError):
    """Grid points are not strictly increasing or leave the support."""


class DegenerateCellError(ArithmeticError):
    """A Voronoi cell carries zero probability mass."""


def _check_points(dist: Distribution, points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidGridError("grid must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(x)):
        raise InvalidGridError("grid points must be finite")
    if np.any(np.diff(x) <= 0):
        raise InvalidGridError("grid points must be strictly increasing")
    lo, hi = dist.support
    if x[0] < lo or x[-1] > hi:
        raise InvalidGridError(f"grid points must lie in the support [{lo}, {hi}]")
    return x


def cell_bounds(dist: Distribution, points) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper Voronoi cell endpoints (support bounds at the ends)."""
    x = np.asarray(points, dtype=float)
    mid = 0.5 * (x[1:] + x[:-1])
    lo, hi = dist.support
    return np.concatenate(([lo], mid)), np.concatenate((mid, [hi]))


def _cell_moments(dist, x):
    a, b = cell_bounds(dist, x)
    m0, m1, m2 = dist.interval_moments(a, b)
    return a, b, np.atleast_1d(m0), np.atleast_1d(m1), np.atleast_1d(m2)


@dataclass
class QuantizerGrid:
    """Sorted grid, cell weights and distortion of one law at level N."""

    distribution: Distribution
    points: np.ndarray
    weights: np.ndarray
    distortion: float

    @classmethod
    def from_points(cls, dist: Distribution, points) -> "QuantizerGrid":
        x = _check_points(dist, points)
        _, _, m0, m1, m2 = _cell_moments(dist, x)
        local = np.maximum(m2 - 2 * x * m1 + x * x * m0, 0.0)
        return cls(dist, x, m0, float(math.fsum(local)))

    @property
    def level(self) -> int:
        return int(self.points.size)

    @property
    def midpoints(self) -> np.ndarray:
        """``x_{1/2}, ..., x_{N+1/2}`` including the support endpoints."""
        a, b = cell_bounds(self.distribution, self.points)
        return np.concatenate((a, b[-1:]))

    def rescaled(self, shift: float, scale: float, dist: Distribution) -> "QuantizerGrid":
        """Affine image of the grid; optimality is preserved for ``dist``."""
        if scale <= 0:
            raise ValueError("scale must be positive")
        return QuantizerGrid(dist, shift + scale * self.points, self.weights.copy(), self.distortion * scale**2)


@dataclass
class DistortionResult:
    value: float
    gradient: np.ndarray
    hessian_diag: np.ndarray
    hessian_off: np.ndarray

    def hessian(self) -> np.ndarray:
        """Dense symmetric tridiagonal Hessian (for small N / tests)."""
        return np.diag(self.hessian_diag) + np.diag(self.hessian_off, 1) + np.diag(self.hessian_off, -1)


def _distortion_terms(dist, x):
    a, b, m0, m1, m2 = _cell_moments(dist, x)
    local = m2 - 2 * x * m1 + x * x * m0
    value = float(math.fsum(np.maximum(local, 0.0)))
    grad = 2.0 * (x * m0 - m1)
    # boundary terms: -(1/2) (x_{i+1} - x_i) phi(x_{i+1/2}) couples neighbours
    gap = np.diff(x)
    off = -0.5 * gap * np.atleast_1d(dist.pdf(b[:-1]))
    diag = 2.0 * m0
    diag[:-1] += off
    diag[1:] += off
    return value, grad, diag, off, m0


def distortion(grid) -> DistortionResult:
    """Quadratic distortion with exact gradient and tridiagonal Hessian.

    ``grid`` is a :class:`QuantizerGrid` or a ``(distribution, points)`` pair.
    """
    if isinstance(grid, QuantizerGrid):
        dist, x = grid.distribution, grid.points
    else:
        dist, x = grid
    x = _check_points(dist, x)
    value, grad, diag, off, _ = _distortion_terms(dist, x)
    return DistortionResult(value, grad, diag, off)


def weights(grid: QuantizerGrid) -> np.ndarray:
    a, b = cell_bounds(grid.distribution, grid.points)
    return np.atleast_1d(grid.distribution.interval_moments(a, b)[0])


def stationarity_residual(grid: QuantizerGrid) -> float:
    """``max_i |x_i p_i - int_{C_i} xi dP| / p_i``, i.e. distance to centroids."""
    _, _, m0, m1, _ = _cell_moments(grid.distribution, grid.points)
    if np.any(m0 <= 0):
        raise DegenerateCellError("zero-mass cell")
    return float(np.max(np.abs(grid.points * m0 - m1) / m0))


def local_distortions(grid: QuantizerGrid) -> np.ndarray:
    """Per-cell ``int_{C_i} |xi - x_i|^2 dP``."""
    _, _, m0, m1, m2 = _cell_moments(grid.distribution, grid.points)
    x = grid.points
    return np.maximum(m2 - 2 * x * m1 + x * x * m0, 0.0)


def lloyd_step(grid: QuantizerGrid) -> QuantizerGrid:
    """Replace every point by the conditional mean of its cell."""
    _, _, m0, m1, _ = _cell_moments(grid.distribution, grid.points)
    if np.any(m0 <= 0):
        bad = int(np.flatnonzero(m0 <= 0)[0])
        raise DegenerateCellError(f"cell {bad} has zero mass")
    return QuantizerGrid.from_points(grid.distribution, m1 / m0)


# --------------------------------------------------------------------------
# Newton-Raphson / Levenberg-Marquardt


@dataclass
class OptimizeConfig:
    """Stopping rule and damping schedule of :func:`optimize`.

    ``tol`` defaults to ``1e-11 * N`` on the gradient sup-norm.  Since the
    gradient of a cell scales with its mass, far tail cells are also required
    to sit within ``residual_tol * max(1, |x_i|)`` of their centroid.
    """

    tol: float | None = None
    max_iter: int = 200
    mu_init: float = 1e-4  # relative to mean Hessian diagonal
    mu_up: float = 10.0
    mu_down: float = 10.0
    mu_max: float = 1e6  # relative; exceeding it triggers the Lloyd fallback
    lloyd_fallback_steps: int = 20
    residual_tol: float = 1e-9
    polish_steps: int = 3

    def tolerance(self, n: int) -> float:
        return self.tol if self.tol is not None else 1e-11 * n


@dataclass
class OptimizeReport:
    iterations: int = 0
    final_gradient_norm: float = math.inf
    damping_history: list = field(default_factory=list)
    converged: bool = False
    lloyd_fallbacks: int = 0


def _valid(dist, x):
    lo, hi = dist.support
    return bool(np.all(np.isfinite(x)) and np.all(np.diff(x) > 0) and x[0] > lo and x[-1] < hi)


def _solve_damped(diag, off, mu, rhs):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = off
    ab[1] = diag + mu
    ab[2, :-1] = off
    return linalg.solve_banded((1, 1), ab, rhs, check_finite=False)


def _rounding_band(x, m0, value):
    """Absolute rounding noise of the summed local distortions."""
    return 64 * np.finfo(float).eps * float(np.sum(x * x * m0)) + 1e-14 * value


def _residual(grad, m0, x):
    """Max distance to centroid, relative to the point magnitude beyond 1."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(grad) / (2.0 * m0 * np.maximum(1.0, np.abs(x)))
    return float(np.max(np.where(m0 > 0, r, np.inf)))


def initial_grid(dist: Distribution, n: int) -> np.ndarray:
    return np.atleast_1d(dist.ppf((2 * np.arange(1, n + 1) - 1) / (2.0 * n)))


def optimize(dist: Distribution, n: int, config: OptimizeConfig | None = None):
    """Optimal quadratic N-quantizer by damped Newton iterations.

    Returns ``(grid, report)``.  On non-convergence the best grid found is
    returned with ``report.converged`` false.
    """
    if n < 1:
        raise ValueError("N must be >= 1")
    cfg = config or OptimizeConfig()
    report = OptimizeReport()
    if n == 1:
        grid = QuantizerGrid.from_points(dist, [dist.mean])
        report.converged = True
        report.final_gradient_norm = 0.0
        return grid, report

    tol = cfg.tolerance(n)
    x = initial_grid(dist, n)
    value, grad, diag, off, m0 = _distortion_terms(dist, x)
    gnorm = float(np.max(np.abs(grad)))
    scale = float(np.mean(diag))
    mu = cfg.mu_init * scale

    resid = _residual(grad, m0, x)
    while report.iterations < cfg.max_iter and (gnorm > tol or resid > cfg.residual_tol):
        report.iterations += 1
        report.damping_history.append(mu)
        try:
            step = _solve_damped(diag, off, mu, -grad)
        except (linalg.LinAlgError, ValueError):
            step = None
        accepted = False
        if step is not None:
            x_new = x + step
            if _valid(dist, x_new):
                v_new, g_new, d_new, o_new, m0_new = _distortion_terms(dist, x_new)
                # tail cells move the distortion below its rounding level
                if v_new <= value + _rounding_band(x_new, m0_new, value):
                    accepted = True
                    x, value, grad, diag, off, m0 = x_new, v_new, g_new, d_new, o_new, m0_new
                    gnorm = float(np.max(np.abs(grad)))
                    resid = _residual(grad, m0, x)
        if accepted:
            mu /= cfg.mu_down
        else:
            mu *= cfg.mu_up
            if mu > cfg.mu_max * scale:
                report.lloyd_fallbacks += 1
                g = QuantizerGrid(dist, x, None, value)
                for _ in range(cfg.lloyd_fallback_steps):
                    g = lloyd_step(g)
                x = g.points
                value, grad, diag, off, m0 = _distortion_terms(dist, x)
                gnorm = float(np.max(np.abs(grad)))
                resid = _residual(grad, m0, x)
                mu = cfg.mu_init * scale

    report.converged = gnorm <= tol and resid <= cfg.residual_tol
    if report.converged:
        # undamped steps while the residual keeps shrinking
        for _ in range(cfg.polish_steps):
            try:
                x_new = x + _solve_damped(diag, off, 0.0, -grad)
            except (linalg.LinAlgError, ValueError):
                break
            if not _valid(dist, x_new):
                break
            v_new, g_new, d_new, o_new, m0_new = _distortion_terms(dist, x_new)
            r_new = _residual(g_new, m0_new, x_new)
            if r_new >= resid:
                break
            x, value, grad, diag, off, m0, resid = x_new, v_new, g_new, d_new, o_new, m0_new, r_new
        gnorm = float(np.max(np.abs(grad)))
        report.converged = gnorm <= tol
    report.final_gradient_norm = gnorm
    return QuantizerGrid.from_points(dist, x), report


# --------------------------------------------------------------------------
# independent oracle


def brute_force_quantizer(dist: Distribution, n: int, grid_resolution: int = 2000) -> QuantizerGrid:
    """Globally optimal partition into N unions of equal-mass quantile bins.

    Dynamic programming over ``grid_resolution`` quantile bins; cell costs are
    exact conditional variances, so the returned distortion upper-bounds the
    true optimum and converges to it as the resolution grows.  Intended for
    N <= 5 as a check on :func:`optimize`.
    """
    if not 1 <= n <= 5:
        raise ValueError("brute force search supports 1 <= N <= 5")
    m = int(grid_resolution)
    if m < n:
        raise ValueError("resolution must exceed N")
    edges = np.atleast_1d(dist.ppf(np.linspace(0.0, 1.0, m + 1)))
    edges[0], edges[-1] = dist.support
    b0, b1, b2 = (np.atleast_1d(v) for v in dist.interval_moments(edges[:-1], edges[1:]))
    s0, s1, s2 = (np.concatenate(([0.0], np.cumsum(v))) for v in (b0, b1, b2))

    # cost[j, k]: bins j..k-1 merged into one cell around its centroid
    w = s0[None, :] - s0[:, None]
    f1 = s1[None, :] - s1[:, None]
    f2 = s2[None, :] - s2[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = f2 - f1 * f1 / w
    upper = np.triu(np.ones((m + 1, m + 1), dtype=bool), 1)
    cost = np.where(upper & (w > 0), np.maximum(cost, 0.0), np.inf)

    best = cost[0].copy()
    choices = []
    for _ in range(1, n):
        total = best[:, None] + cost
        arg = np.argmin(total, axis=0)
        choices.append(arg)
        best = total[arg, np.arange(m + 1)]

    cuts = [m]
    for arg in reversed(choices):
        cuts.append(int(arg[cuts[-1]]))
    cuts.append(0)
    cuts = cuts[::-1]
    centroids = [(s1[k] - s1[j]) / (s0[k] - s0[j]) for j, k in zip(cuts[:-1], cuts[1:])]
    return QuantizerGrid.from_points(dist, centroids)


# --------------------------------------------------------------------------
# asymptotic diagnostics


def local_behavior_table(grid: QuantizerGrid, window) -> np.ndarray:
    """Rows ``(x_i, N p_i, N^3 * local distortion_i)`` for x_i in ``window``."""
    lo, hi = window
    n = grid.level
    mask = (grid.points >= lo) & (grid.points <= hi)
    local = local_distortions(grid)
    w = weights(grid)
    return np.column_stack((grid.points[mask], n * w[mask], n**3 * local[mask]))


def lp_distortion(grid: QuantizerGrid, s: float) -> float:
    """``E|X - X^N|^s`` by per-cell adaptive quadrature."""
    dist = grid.distribution
    a, b = cell_bounds(dist, grid.points)
    total = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for xi, lo, hi in zip(grid.points, a, b):
            f = lambda u, xi=xi: abs(u - xi) ** s * float(dist.pdf(u))  # noqa: E731
            left = integrate.quad(f, lo, xi, epsabs=0.0, epsrel=1e-10, limit=200)[0]
            right = integrate.quad(f, xi, hi, epsabs=0.0, epsrel=1e-10, limit=200)[0]
            total.append(left + right)
    return math.fsum(total)


def weighted_distortion(grid: QuantizerGrid, g) -> float:
    """``E[g(X^N) |X - X^N|^2]``."""
    return float(math.fsum(np.asarray(g(grid.points), dtype=float) * local_distortions(grid)))
