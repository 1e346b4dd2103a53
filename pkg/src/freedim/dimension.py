"""Free entropy dimension bounds and the empirical packing experiment.

The closed-form side: the regularised log-integral ratio of a step
function and its limit, the ``K_N`` areas, and the lower/upper bounds
``1 + 2 area(supp H)`` and ``min(2, 1 + 2 area(supp H))``.  The empirical
side draws weighted Gaussian samples, treats them as a point cloud and
fits a packing-count slope.  The slope is an exploratory surrogate and is
always reported next to the exact bounds, never in their place.
"""

from __future__ import annotations

import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import InvalidParameter
from .kernel import (GridKernel, HypothesisReport, StepFunction, delta0_lower,
                     delta0_upper, kn_support_area, theorem_main_hypothesis)
from .packing import PackingReport, cloud_from_samples, packing_report, MAX_POINTS
from .randmat import SampleConfig, weighted_sample

__all__ = [
    "prop1_ratio", "Prop1Report", "prop1_limit_check", "kn_area",
    "DimensionBounds", "dimension_bounds", "DimensionExperimentReport",
    "dimension_experiment",
]


def _check_eps_unit(eps):
    eps = float(eps)
    if not 0 < eps < 1:
        raise InvalidParameter(f"eps must lie in (0, 1), got {eps}")
    return eps


def _check_nonneg(f: StepFunction):
    if any(v < 0 for v in f.values):
        raise InvalidParameter("step function must be nonnegative")


def prop1_ratio(f: StepFunction, eps: float) -> float:
    """``\\int_0^1 log(max(f, eps)) dt / |log eps|`` for a step function ``f >= 0``."""
    eps = _check_eps_unit(eps)
    _check_nonneg(f)
    total = math.fsum(math.log(max(float(v), eps)) for v in f.values) / f.n
    return total / abs(math.log(eps))


@dataclass(frozen=True)
class Prop1Report:
    eps_grid: tuple
    ratios: tuple
    limit_target: Fraction  # measure(supp f) - 1
    bound: float            # exact error bound at the smallest eps
    within_bound: bool


def prop1_limit_check(f: StepFunction, eps_grid: Sequence[float]) -> Prop1Report:
    """Ratios along a decreasing grid and the exact error bound at its end.

    Once ``eps`` is below every positive value of ``f`` the ratio differs
    from the limit by exactly ``sum_{v>0} log(v) / (n |log eps|)``, whose
    absolute value is bounded by ``sum_{v>0} |log v| / (n |log eps|)``.
    """
    _check_nonneg(f)
    grid = tuple(float(e) for e in eps_grid)
    if not grid:
        raise InvalidParameter("empty eps grid")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise InvalidParameter("eps grid must be strictly decreasing")
    ratios = tuple(prop1_ratio(f, e) for e in grid)
    positive = [v for v in f.values if v > 0]
    target = Fraction(len(positive), f.n) - 1
    eps_min = grid[-1]
    if positive and eps_min >= min(positive):
        raise InvalidParameter("smallest eps must lie below every positive value of f")
    bound = math.fsum(abs(math.log(float(v))) for v in positive) / (f.n * abs(math.log(eps_min)))
    within = abs(ratios[-1] - float(target)) <= bound * (1 + 1e-12) + 1e-15
    return Prop1Report(grid, ratios, target, bound, within)


def kn_area(N: int) -> Fraction:
    """Area ``(N - 1) / (2N)`` of the off-diagonal upper blocks of the ``N x N`` block grid."""
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)) or N < 2:
        raise InvalidParameter(f"N must be an integer >= 2, got {N!r}")
    return Fraction(int(N) - 1, 2 * int(N))


@dataclass(frozen=True)
class DimensionBounds:
    lower: Optional[Fraction]
    upper: Fraction
    hypothesis: HypothesisReport
    kn_series: dict  # N -> 1 + 2 area(supp H inside K_N), for N >= 2 dividing n

    def as_dict(self) -> dict:
        h = self.hypothesis
        return {
            "lower": None if self.lower is None else str(self.lower),
            "lower_float": None if self.lower is None else float(self.lower),
            "upper": str(self.upper),
            "upper_float": float(self.upper),
            "hypothesis": {"holds": h.holds, "r": h.r,
                           "c": None if h.c is None else str(h.c),
                           "failure_reason": h.failure_reason, "valid_r": list(h.valid_r)},
            "kn_series": {str(N): str(v) for N, v in self.kn_series.items()},
        }


def dimension_bounds(K: GridKernel) -> DimensionBounds:
    series = {N: 1 + 2 * kn_support_area(K, N)
              for N in range(2, K.n + 1) if K.n % N == 0}
    return DimensionBounds(delta0_lower(K), delta0_upper(K), theorem_main_hypothesis(K), series)


@dataclass
class DimensionExperimentReport:
    kernel_id: str
    k_list: list
    trials: int
    eps_grid: list
    seed: int
    bounds: DimensionBounds
    packing: dict = field(default_factory=dict)   # k -> PackingReport
    failures: dict = field(default_factory=dict)  # k -> message
    invariant_violations: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        def rep(r: PackingReport):
            return {"m": r.m, "eps_grid": list(r.eps_grid), "p_hat": list(r.p_hat),
                    "k_hat": list(r.k_hat), "slope": r.slope, "slope_stderr": r.slope_stderr,
                    "diagnostics": r.diagnostics}
        return {
            "kernel_id": self.kernel_id,
            "k_list": list(self.k_list),
            "trials": self.trials,
            "eps_grid": list(self.eps_grid),
            "seed": self.seed,
            "bounds": self.bounds.as_dict(),
            "packing": {str(k): rep(r) for k, r in self.packing.items()},
            "failures": {str(k): msg for k, msg in self.failures.items()},
            "invariant_violations": list(self.invariant_violations),
            "provenance": dict(self.provenance),
        }


def _draw(args):
    K, k, seed, t = args
    return weighted_sample(K, SampleConfig(k, seed, t))


def dimension_experiment(K: GridKernel, k_list, trials: int, eps_grid, seed: int = 0,
                         workers: int = 1, kernel_id: str = "kernel") -> DimensionExperimentReport:
    """Packing-count slopes of weighted-sample clouds next to the exact bounds.

    For each ``k`` the cloud is ``weighted_sample(K, SampleConfig(k, seed, t))``
    for ``t < trials``.  Samples are generated concurrently but collected
    in trial order, so the report does not depend on ``workers``.
    """
    if not 1 <= trials <= MAX_POINTS:
        raise InvalidParameter(f"trials must lie in [1, {MAX_POINTS}], got {trials}")
    eps = sorted(float(e) for e in eps_grid)
    if not eps or eps[0] <= 0:
        raise InvalidParameter("eps grid must be non-empty and positive")
    bounds = dimension_bounds(K)
    report = DimensionExperimentReport(
        kernel_id, [int(k) for k in k_list], int(trials), eps, int(seed), bounds,
        provenance={"freedim": __version__, "numpy": np.__version__,
                    "python": platform.python_version(),
                    "rng": "Philox4x64 keyed by SeedSequence(seed, spawn_key=(trial,)); Box-Muller"})
    if bounds.lower is not None and bounds.lower > bounds.upper:
        report.invariant_violations.append("lower bound exceeds upper bound")
    for k in report.k_list:
        try:
            jobs = [(K, k, int(seed), t) for t in range(trials)]
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    mats = list(pool.map(_draw, jobs))
            else:
                mats = [_draw(j) for j in jobs]
            rep = packing_report(cloud_from_samples(mats), eps)
        except Exception as exc:  # partial results survive with a marker
            report.failures[k] = f"{type(exc).__name__}: {exc}"
            continue
        report.packing[k] = rep
        if any(b > a for a, b in zip(rep.p_hat, rep.p_hat[1:])):
            report.invariant_violations.append(f"k={k}: p_hat increases with eps")
        if any(b > a for a, b in zip(rep.k_hat, rep.k_hat[1:])):
            report.invariant_violations.append(f"k={k}: k_hat increases with eps")
    return report
