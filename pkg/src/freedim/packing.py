"""Packing and covering numbers of finite point clouds.

Packing uses the center-distance convention: a set of points packs
``eps``-balls when all pairwise distances are at least ``2 * eps``.  A
cover by ``eps``-balls uses centers from the cloud and open balls, so a
point is covered when it is strictly closer than ``eps`` to a center.
With these conventions ``P_{4eps} <= K_{2eps} <= P_eps`` holds on every
finite metric space.

Greedy counts are one-sided estimators: greedy packing is a lower bound
for the packing number, greedy covering an upper bound for the covering
number.  Exact values come from exhaustive subset search for clouds of
at most ``EXACT_LIMIT`` points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import FitError, InvalidParameter, ShapeError

__all__ = [
    "PointCloud", "PackingReport", "SandwichReport", "SlopeFit",
    "cloud_from_samples", "cloud_from_points", "greedy_packing", "greedy_covering",
    "exact_packing", "exact_covering", "sandwich_check", "log_ball_volume",
    "slope_estimate", "packing_report", "grid_points", "EXACT_LIMIT", "MAX_POINTS",
]

EXACT_LIMIT = 12
MAX_POINTS = 4096


@dataclass(frozen=True, eq=False)
class PointCloud:
    dist: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        d = self.dist
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ShapeError(f"distance matrix must be square, got {d.shape}")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(d.shape[0])))
        d.setflags(write=False)

    @property
    def m(self) -> int:
        return self.dist.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.m else 0.0

    def check_triangle(self, rng=None, triples=1000, slack=1e-9) -> bool:
        """Spot-check the triangle inequality on random triples."""
        if self.m < 3:
            return True
        rng = np.random.default_rng(0) if rng is None else rng
        a, b, c = rng.integers(0, self.m, size=(3, triples))
        d = self.dist
        return bool(np.all(d[a, c] <= d[a, b] + d[b, c] + slack))


def _check_size(m):
    if m > MAX_POINTS:
        raise InvalidParameter(f"cloud has {m} points; at most {MAX_POINTS} are supported")


def cloud_from_samples(matrices: Sequence[np.ndarray], labels=()) -> PointCloud:
    """Cloud of matrices under the normalised Hilbert-Schmidt distance."""
    mats = [np.asarray(x) for x in matrices]
    if not mats:
        raise ShapeError("need at least one matrix")
    shape = mats[0].shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ShapeError(f"expected square matrices, got shape {shape}")
    for x in mats:
        if x.shape != shape:
            raise ShapeError(f"dimension mismatch: {x.shape} vs {shape}")
    _check_size(len(mats))
    k = shape[0]
    flat = np.stack([x.reshape(-1) for x in mats]).astype(complex)
    real = np.concatenate([flat.real, flat.imag], axis=1)
    return cloud_from_points(real, labels=labels, scale=1.0 / math.sqrt(k))


def cloud_from_points(points, labels=(), scale=1.0) -> PointCloud:
    """Cloud of real vectors under ``scale`` times the Euclidean distance."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    _check_size(len(pts))
    if len(pts) == 1:
        dist = np.zeros((1, 1))
    else:
        dist = squareform(pdist(pts)) * scale
    return PointCloud(dist, tuple(labels))


def _check_eps(eps):
    if not eps > 0:
        raise InvalidParameter(f"eps must be positive, got {eps}")


def greedy_packing(cloud: PointCloud, eps: float) -> int:
    """Size of the maximal ``2 eps``-separated subset built in index order."""
    _check_eps(eps)
    blocked = np.zeros(cloud.m, dtype=bool)
    count = 0
    for a in range(cloud.m):
        if not blocked[a]:
            blocked |= cloud.dist[a] < 2 * eps
            count += 1
    return count


def greedy_covering(cloud: PointCloud, eps: float) -> int:
    """Greedy max-coverage cover by open ``eps``-balls at cloud points."""
    _check_eps(eps)
    balls = cloud.dist < eps  # symmetric
    uncovered = np.ones(cloud.m, dtype=bool)
    gain = balls.sum(axis=1)
    count = 0
    while uncovered.any():
        best = int(np.argmax(gain))  # lowest index among ties
        newly = balls[best] & uncovered
        uncovered &= ~newly
        gain -= balls[newly].sum(axis=0)
        count += 1
    return count


def _masks(rel: np.ndarray) -> list[int]:
    return [sum(1 << b for b in np.flatnonzero(row)) for row in rel]


def _require_small(cloud):
    if cloud.m > EXACT_LIMIT:
        raise InvalidParameter(f"exhaustive search needs at most {EXACT_LIMIT} points, got {cloud.m}")


def exact_packing(cloud: PointCloud, eps: float) -> int:
    """Largest ``2 eps``-separated subset, by enumeration over all subsets."""
    _check_eps(eps)
    _require_small(cloud)
    m = cloud.m
    conflict = cloud.dist < 2 * eps
    np.fill_diagonal(conflict, False)
    conf = _masks(conflict)
    ok = [True] * (1 << m)
    best = 0
    for mask in range(1, 1 << m):
        low = (mask & -mask).bit_length() - 1
        rest = mask & (mask - 1)
        ok[mask] = ok[rest] and not (conf[low] & rest)
        if ok[mask]:
            best = max(best, bin(mask).count("1"))
    return best


def exact_covering(cloud: PointCloud, eps: float) -> int:
    """Fewest open ``eps``-balls at cloud points covering the cloud."""
    _check_eps(eps)
    _require_small(cloud)
    m = cloud.m
    full = (1 << m) - 1
    ball = _masks(cloud.dist < eps)
    cover = [0] * (1 << m)
    best = m
    for mask in range(1, 1 << m):
        low = (mask & -mask).bit_length() - 1
        cover[mask] = cover[mask & (mask - 1)] | ball[low]
        if cover[mask] == full:
            best = min(best, bin(mask).count("1"))
    return best


@dataclass(frozen=True)
class SandwichReport:
    eps: float
    p_4eps: int
    k_2eps: int
    p_eps: int
    holds: bool
    estimator_mode: bool


def sandwich_check(cloud: PointCloud, eps: float) -> SandwichReport:
    """Check ``P_{4eps} <= K_{2eps} <= P_eps``.

    Exact for clouds up to ``EXACT_LIMIT`` points.  Above that only the
    guaranteed direction is checked: greedy packing at ``4 eps`` (a lower
    bound on ``P_{4eps}``) against the smaller of two upper bounds on
    ``K_{2eps}``, the greedy cover and the greedy packing at ``eps`` (a
    maximal packing is a ``2 eps``-cover).
    """
    _check_eps(eps)
    if cloud.m <= EXACT_LIMIT:
        p4 = exact_packing(cloud, 4 * eps)
        k2 = exact_covering(cloud, 2 * eps)
        p1 = exact_packing(cloud, eps)
        return SandwichReport(eps, p4, k2, p1, p4 <= k2 <= p1, False)
    p4 = greedy_packing(cloud, 4 * eps)
    p1 = greedy_packing(cloud, eps)
    k2 = min(greedy_covering(cloud, 2 * eps), p1)
    return SandwichReport(eps, p4, k2, p1, p4 <= k2, True)


def log_ball_volume(d: int, r: float) -> float:
    """Log-volume of the Euclidean ball of radius ``r`` in ``R^d``."""
    if isinstance(d, bool) or not isinstance(d, (int, np.integer)) or d < 1:
        raise InvalidParameter(f"d must be a positive integer, got {d!r}")
    if not r > 0:
        raise InvalidParameter(f"r must be positive, got {r}")
    return d / 2 * math.log(math.pi) + d * math.log(r) - math.lgamma(d / 2 + 1)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    residuals: tuple
    used: tuple  # indices of grid points in the fit


def slope_estimate(eps_grid, counts) -> SlopeFit:
    """Least-squares slope of ``log count`` against ``|log eps|``.

    Only grid points with ``count >= 2`` enter the fit.  A cloud whose
    counts never exceed one has slope 0.  This is an exploratory surrogate
    and carries no convergence claim.
    """
    eps = np.asarray(eps_grid, dtype=float)
    c = np.asarray(counts, dtype=float)
    if eps.shape != c.shape:
        raise FitError("eps grid and counts differ in length")
    if np.all(c <= 1):
        return SlopeFit(0.0, 0.0, 0.0, tuple(np.zeros(len(c))), tuple(range(len(c))))
    used = np.flatnonzero(c >= 2)
    if len(used) < 3:
        raise FitError(f"need at least 3 grid points with count >= 2, got {len(used)}")
    x = np.abs(np.log(eps[used]))
    y = np.log(c[used])
    if np.ptp(x) == 0:
        raise FitError("eps grid points coincide")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, intercept])
    dof = len(used) - 2
    sxx = np.sum((x - x.mean()) ** 2)
    stderr = float(np.sqrt(np.sum(resid ** 2) / dof / sxx)) if dof > 0 else 0.0
    return SlopeFit(float(slope), float(intercept), stderr, tuple(resid), tuple(int(u) for u in used))


@dataclass(frozen=True)
class PackingReport:
    """Monotone packing/covering estimates over an ``eps`` grid.

    ``p_hat[i]`` is the largest greedy packing found at any grid radius
    ``>= eps_grid[i]`` (each is a valid ``eps_grid[i]``-packing);
    ``k_hat[i]`` is the smallest greedy cover at any radius ``<= eps_grid[i]``.
    Both are therefore nonincreasing in ``eps`` and keep their one-sided
    guarantees.
    """

    eps_grid: tuple
    p_hat: tuple
    k_hat: tuple
    m: int
    slope: Optional[float]
    slope_stderr: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)


def packing_report(cloud: PointCloud, eps_grid) -> PackingReport:
    eps = sorted(float(e) for e in eps_grid)
    if not eps:
        raise InvalidParameter("empty eps grid")
    for e in eps:
        _check_eps(e)
    p_raw = [greedy_packing(cloud, e) for e in eps]
    k_raw = [greedy_covering(cloud, e) for e in eps]
    p_hat = list(np.maximum.accumulate(p_raw[::-1])[::-1])
    k_hat = list(np.minimum.accumulate(k_raw))
    diagnostics = {"p_raw": p_raw, "k_raw": k_raw}
    try:
        fit = slope_estimate(eps, p_hat)
        slope, stderr = fit.slope, fit.stderr
        diagnostics["residuals"] = list(fit.residuals)
        diagnostics["fit_points"] = list(fit.used)
    except FitError as exc:
        slope = stderr = None
        diagnostics["fit_error"] = str(exc)
    return PackingReport(tuple(eps), tuple(int(x) for x in p_hat), tuple(int(x) for x in k_hat),
                         cloud.m, slope, stderr, diagnostics)


def grid_points(d: int, g: int) -> np.ndarray:
    """The ``g^d`` points of the regular grid with spacing ``1/(g-1)`` in ``[0, 1]^d``."""
    axes = [np.linspace(0.0, 1.0, g)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
