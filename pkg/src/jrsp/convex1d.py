"""Speed-window algebra and one-dimensional convex minimization.

Every subproblem in the route-cost and pricing code reduces to minimizing
``D * f(v)`` (optionally plus ``w * D / v``) over a closed speed interval,
which for a strictly convex rate is attained at the clamped unconstrained
minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .model import CostFunction, time_weighted_minimizer

EPS_T = 1e-9

FREE = "free"
AT_MOST = "at_most"
EXACTLY = "exactly"


@dataclass(frozen=True, slots=True)
class SpeedWindow:
    """Closed speed interval ``[lo, hi]`` or the explicit empty window."""

    lo: float = math.nan
    hi: float = math.nan
    empty: bool = False

    @staticmethod
    def closed(lo: float, hi: float, tol: float = EPS_T) -> "SpeedWindow":
        """Window ``[lo, hi]``; bounds crossing by at most ``tol`` collapse to a point."""
        if lo > hi:
            if lo - hi > tol * max(1.0, abs(hi)):
                return EMPTY
            mid = 0.5 * (lo + hi)
            return SpeedWindow(mid, mid)
        return SpeedWindow(lo, hi)

    def contains(self, v: float, tol: float = EPS_T) -> bool:
        if self.empty:
            return False
        slack = tol * max(1.0, abs(v))
        return self.lo - slack <= v <= self.hi + slack

    def clamp(self, v: float) -> float:
        return min(max(v, self.lo), self.hi)

    def intersect(self, lo: float, hi: float) -> "SpeedWindow":
        if self.empty:
            return EMPTY
        return SpeedWindow.closed(max(self.lo, lo), min(self.hi, hi))

    @property
    def is_point(self) -> bool:
        return not self.empty and self.lo == self.hi

    def __repr__(self):
        return "SpeedWindow(empty)" if self.empty else f"SpeedWindow({self.lo!r}, {self.hi!r})"


EMPTY = SpeedWindow(empty=True)


class RateSolution(NamedTuple):
    speed: float
    value: float


def min_rate_cost(D: float, cost: CostFunction, S: SpeedWindow, arrival: str = FREE,
                  T: float | None = None, depart: float = 0.0, elapsed_service: float = 0.0,
                  time_weight: float = 0.0) -> RateSolution | None:
    """Minimize ``D * f(v) + time_weight * D / v`` over the admissible speeds.

    The admissible set is ``S`` further restricted by the arrival rule: with
    ``at_most`` the travel time ``D / v`` may not exceed
    ``T - depart - elapsed_service``; with ``exactly`` it must equal it.

    Returns:
        The optimal speed and objective value, or ``None`` when infeasible.
    """
    if S.empty:
        return None
    if arrival != FREE:
        if T is None:
            raise ValueError(f"arrival={arrival!r} needs T")
        avail = T - depart - elapsed_service
        if D == 0.0:
            ok = avail >= -EPS_T * max(1.0, abs(T)) if arrival == AT_MOST else abs(avail) <= EPS_T * max(1.0, abs(T))
            if not ok:
                return None
            return RateSolution(S.lo, 0.0)
        if avail <= 0:
            return None
        needed = D / avail
        if arrival == EXACTLY:
            if not S.contains(needed):
                return None
            v = S.clamp(needed)
            return RateSolution(v, D * (cost.rate(v) + time_weight / v))
        if arrival != AT_MOST:
            raise ValueError(f"unknown arrival rule {arrival!r}")
        if needed > S.hi:
            if not S.contains(needed):
                return None
            needed = S.hi
        lo = max(S.lo, needed)
    else:
        if D == 0.0:
            return RateSolution(S.lo, 0.0)
        lo = S.lo
    v = time_weighted_minimizer(cost, time_weight, lo, S.hi)
    return RateSolution(v, D * (cost.rate(v) + time_weight / v))


def intersect_time_window(S: SpeedWindow, D: float, depart_plus_service: float,
                          a: float, b: float) -> SpeedWindow:
    """Speeds in ``S`` that reach a vertex with window ``[a, b]`` without waiting.

    The vehicle has already spent ``depart_plus_service`` time and covers
    distance ``D`` at uniform speed, so the arrival time is
    ``depart_plus_service + D / v``.
    """
    if S.empty:
        return S
    if D == 0.0:
        t = depart_plus_service
        tol = EPS_T * max(1.0, abs(t))
        return S if a - tol <= t <= b + tol else EMPTY
    late = b - depart_plus_service
    if late <= 0:
        return EMPTY
    lo = D / late
    early = a - depart_plus_service
    hi = D / early if early > 0 else math.inf
    return S.intersect(lo, hi)
