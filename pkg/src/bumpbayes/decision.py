"""Loss function, Bayes risk, the Bayes-rule decision set, credible interval.

The decision space is {absent} plus finite unions of open mass intervals.
The Bayes rule keeps every mass whose posterior density exceeds the local
loss ratio l(m)/C(m) and keeps the absent state when the posterior odds
beat l(absent)/C(absent); equality resolves to exclusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from . import model

__all__ = [
    "DecisionSet",
    "LossSpec",
    "bayes_risk",
    "bayes_rule",
    "credible_interval",
    "loss",
]

LossCurve = Callable[[float], float]


def _as_curve(value) -> LossCurve:
    if callable(value):
        return value
    v = float(value)
    if not (v > 0 and math.isfinite(v)):
        raise ValueError("loss values must be strictly positive and finite")
    return lambda _m: v


@dataclass(frozen=True)
class LossSpec:
    """Inclusion loss density l(m), exclusion losses C(m), and absent losses.

    ``l_density`` and ``C_exclusion`` accept a constant or a callable of
    mass; ``l_absent``/``C_absent`` are the losses for wrongly including /
    excluding the absent state.  Only the ratios matter for the rule.
    """

    l_density: float | LossCurve
    C_exclusion: float | LossCurve
    l_absent: float
    C_absent: float

    def __post_init__(self):
        if not (self.l_absent > 0 and math.isfinite(self.l_absent)):
            raise ValueError("l_absent must be strictly positive and finite")
        if not (self.C_absent > 0 and math.isfinite(self.C_absent)):
            raise ValueError("C_absent must be strictly positive and finite")

    @property
    def l(self) -> LossCurve:
        return _as_curve(self.l_density)

    @property
    def C(self) -> LossCurve:
        return _as_curve(self.C_exclusion)

    def ratio(self, m: float) -> float:
        return self.l(m) / self.C(m)

    @property
    def absent_odds_threshold(self) -> float:
        """The absent state enters S iff posterior odds exceed this ratio."""
        return self.l_absent / self.C_absent

    @classmethod
    def from_thresholds(cls, threshold_curve, q_absent: float) -> "LossSpec":
        """Losses whose Bayes rule reproduces calibrated thresholds.

        With C = 1 and l(m) = q(m), masses stay in S iff the posterior
        density exceeds q(m); with l_absent/C_absent = q0/(1-q0) the
        absent state stays iff p_absent exceeds q0.
        """
        if not (0.0 < q_absent < 1.0):
            raise ValueError("q_absent must lie in (0, 1)")
        return cls(
            l_density=threshold_curve,
            C_exclusion=1.0,
            l_absent=q_absent / (1.0 - q_absent),
            C_absent=1.0,
        )


@dataclass(frozen=True)
class DecisionSet:
    """Disjoint ordered open mass intervals plus the absent flag."""

    intervals: tuple[tuple[float, float], ...]
    includes_absent: bool

    def __post_init__(self):
        prev_hi = -math.inf
        for lo, hi in self.intervals:
            if not (lo < hi):
                raise ValueError(f"empty or inverted interval ({lo}, {hi})")
            if lo < prev_hi:
                raise ValueError("intervals must be disjoint and ordered")
            prev_hi = hi

    @property
    def total_length(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)

    def contains(self, m: float) -> bool:
        return any(lo < m < hi for lo, hi in self.intervals)

    def toggled_absent(self) -> "DecisionSet":
        return DecisionSet(self.intervals, not self.includes_absent)


def loss(true_hyp: model.MassHypothesis, S: DecisionSet, spec: LossSpec) -> float:
    """Realized loss of reporting S when the truth is ``true_hyp``.

    Integral of the inclusion loss density over S's intervals, plus the
    wrong-absent-inclusion and exclusion penalties.
    """
    l_curve = spec.l
    total = 0.0
    for lo, hi in S.intervals:
        val, _err = quad(l_curve, lo, hi, limit=200)
        total += val
    if true_hyp.is_absent:
        if not S.includes_absent:
            total += spec.C_absent
    else:
        if S.includes_absent:
            total += spec.l_absent
        if not S.contains(true_hyp.mass):
            total += spec.C(true_hyp.mass)
    return total


def _refined_segments(grid: np.ndarray, boundaries) -> np.ndarray:
    points = np.unique(np.concatenate([grid, np.asarray(boundaries, dtype=float)]))
    return points[(points >= grid[0]) & (points <= grid[-1])]


def _segment_integrals(points: np.ndarray, f) -> np.ndarray:
    """Per-segment Simpson integrals (exact for quadratics on each segment)."""
    lo = points[:-1]
    hi = points[1:]
    mid = 0.5 * (lo + hi)
    return (hi - lo) / 6.0 * (f(lo) + 4.0 * f(mid) + f(hi))


def bayes_risk(S: DecisionSet, posterior, spec: LossSpec) -> float:
    """Posterior expected loss of the decision set S.

    ``posterior`` provides ``p_absent``, ``grid`` and ``density`` (linear
    interpolation between grid points).  Integration is segment-wise
    Simpson on the union of the grid and interval boundaries, exact for
    the piecewise-linear density against constant or piecewise-linear
    loss curves.
    """
    grid = np.asarray(posterior.grid, dtype=float)
    density = np.asarray(posterior.density, dtype=float)
    p_absent = float(posterior.p_absent)
    l_curve = np.vectorize(spec.l, otypes=[float])
    c_curve = np.vectorize(spec.C, otypes=[float])

    boundaries = [b for interval in S.intervals for b in interval]
    points = _refined_segments(grid, boundaries)
    mids = 0.5 * (points[:-1] + points[1:])
    in_s = np.array([S.contains(m) for m in mids])

    dens = lambda x: np.interp(x, grid, density)
    l_int = _segment_integrals(points, l_curve)
    cpi_int = _segment_integrals(points, lambda x: c_curve(x) * dens(x))

    risk = float(np.sum(l_int[in_s])) + float(np.sum(cpi_int[~in_s]))
    if S.includes_absent:
        risk += spec.l_absent * (1.0 - p_absent)
    else:
        risk += spec.C_absent * p_absent
    return risk


def _bisect_root(f, lo: float, hi: float, tol: float = 1e-6) -> float:
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            return mid
        fm = f(mid)
        if (flo <= 0) == (fm <= 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bayes_rule(posterior, spec: LossSpec, boundary_tol: float = 1e-6) -> DecisionSet:
    """Risk-minimizing decision set for the given posterior and losses.

    Masses with density strictly above l(m)/C(m) form the intervals
    (boundaries located by bisection on the interpolated excess); the
    absent state is kept iff its posterior odds strictly exceed
    l_absent/C_absent.  Ties resolve to exclusion.
    """
    grid = np.asarray(posterior.grid, dtype=float)
    density = np.asarray(posterior.density, dtype=float)
    p_absent = float(posterior.p_absent)

    if p_absent >= 1.0:
        return DecisionSet(intervals=(), includes_absent=True)

    # the excess is the interpolated density minus the exact loss ratio;
    # grid points only bracket its sign changes
    def f(x):
        return np.interp(x, grid, density) - spec.ratio(float(x))

    excess = np.array([f(m) for m in grid])
    intervals: list[tuple[float, float]] = []
    open_lo: float | None = grid[0] if excess[0] > 0 else None
    for i in range(len(grid) - 1):
        e0, e1 = excess[i], excess[i + 1]
        if open_lo is None and e0 <= 0 and e1 > 0:
            open_lo = _bisect_root(f, grid[i], grid[i + 1], boundary_tol)
        elif open_lo is not None and e0 > 0 and e1 <= 0:
            hi = _bisect_root(f, grid[i], grid[i + 1], boundary_tol)
            if hi > open_lo:
                intervals.append((open_lo, hi))
            open_lo = None
    if open_lo is not None and open_lo < grid[-1]:
        intervals.append((open_lo, grid[-1]))

    odds = p_absent / (1.0 - p_absent)
    includes_absent = spec.absent_odds_threshold < odds
    return DecisionSet(intervals=tuple(intervals), includes_absent=includes_absent)


def credible_interval(posterior, level: float = 0.95) -> tuple[float, float]:
    """Equal-tail credible interval of the continuous posterior part.

    Renormalizes the density over the window and inverts its CDF at
    (1-level)/2 and 1-(1-level)/2.
    """
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    if float(posterior.p_absent) >= 1.0:
        raise ValueError("no continuous posterior mass; credible interval undefined")
    grid = np.asarray(posterior.grid, dtype=float)
    density = np.asarray(posterior.density, dtype=float)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
    total = cdf[-1]
    if total <= 0:
        raise ValueError("degenerate continuous posterior")
    cdf /= total
    alpha = 0.5 * (1.0 - level)
    lo = float(np.interp(alpha, cdf, grid))
    hi = float(np.interp(1.0 - alpha, cdf, grid))
    return lo, hi
