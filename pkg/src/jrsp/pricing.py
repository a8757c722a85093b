"""Forward labeling for the pricing subproblem.

A label describes a partial walk from the depot together with the last
known active customer (served at ``a`` or ``b`` of its window), the window
of uniform speeds that keep the customers after it seamless, and the cost
of the fixed prefix. Extending a label to ``j`` yields up to three labels:
``j`` active at ``a_j``, ``j`` active at ``b_j``, or ``j`` seamless.

Dominance compares two labels ending at the same vertex through their
finish-time function ``T(v) = s + service + D / v`` and cost function
``C(v) = F + D * f(v)`` over the open segment.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import lru_cache
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .convex1d import AT_MOST, EXACTLY, SpeedWindow, intersect_time_window, min_rate_cost
from .model import CostFunction, Instance
from .sop import SpeedProfile, pattern_cost

EPS_RC = 1e-6
EPS_DOM = 1e-9
EPS_TIME = 1e-9


class RouteVariant(str, Enum):
    """Which walks count as routes in pricing."""

    ELEMENTARY = "elementary"
    TWO_CYCLE_FREE = "2cf"
    QROUTE = "qroute"


@dataclass(frozen=True)
class DualValues:
    """Row duals of the restricted master, in the form pricing needs.

    Attributes:
        mu: Dual of each covering row, indexed by vertex (``mu[0]`` is 0).
        nu: Dual of the fleet-size row.
        arc_dual: ``(n+1) x (n+1)`` sum of cut and branching-row duals
            collected when an arc is traversed.
    """

    mu: np.ndarray
    nu: float
    arc_dual: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DualValues":
        return cls(np.zeros(n + 1), 0.0, np.zeros((n + 1, n + 1)))


@dataclass(frozen=True)
class Column:
    """A route with fixed active positions and start times.

    ``active`` holds route positions (``len(route) - 1`` is the return to
    the depot) and ``starts`` the matching service start times.
    """

    route: tuple[int, ...]
    active: tuple[int, ...]
    starts: tuple[float, ...]
    cost: float
    profile: SpeedProfile | None = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple:
        return (self.route, self.active, self.starts)

    @property
    def is_elementary(self) -> bool:
        inner = self.route[1:-1]
        return len(set(inner)) == len(inner)

    def visits(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for v in self.route[1:-1]:
            counts[v] = counts.get(v, 0) + 1
        return counts

    def arcs(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for i, j in zip(self.route, self.route[1:]):
            counts[(i, j)] = counts.get((i, j), 0) + 1
        return counts


@dataclass(eq=False, slots=True)
class Label:
    """State of a partial walk in the labeling algorithm.

    Attributes:
        last: Current vertex.
        w_pos: Walk position of the last known active vertex (0 at depot).
        s: Service start time of that vertex.
        mask: Bitmask of vertices the walk may not extend to.
        dual_sum: Collected customer and arc duals.
        load: Demand collected so far.
        S: Uniform speed window of the open segment.
        Gamma: Service time from the active vertex through ``last``.
        D: Distance of the open segment.
        F: Cost of the prefix up to the active vertex, load term included.
        cum_dist: Distance travelled from the depot to ``last``.
        length: Number of customers on the walk.
        kind: How ``last`` was reached: ``"a"``, ``"b"``, ``"s"`` (seamless)
            or ``"o"`` for the depot root.
        speed: Speed of the segment closed by an ``"a"``/``"b"`` extension.
    """

    last: int
    w_pos: int
    s: float
    mask: int
    dual_sum: float
    load: float
    S: SpeedWindow
    Gamma: float
    D: float
    F: float
    cum_dist: float
    length: int
    kind: str
    speed: float = math.nan
    parent: "Label | None" = None
    alive: bool = True

    @property
    def is_point(self) -> bool:
        return self.D == 0.0 and self.kind != "s"

    def finish(self, v: float) -> float:
        return self.s + self.Gamma + (self.D / v if self.D else 0.0)

    def prefix_cost(self, v: float, cost: CostFunction) -> float:
        return self.F + (self.D * cost.rate(v) if self.D else 0.0)


def _full_window(inst: Instance) -> SpeedWindow:
    return SpeedWindow(inst.v_lo, inst.speed_hi)


def init_label(inst: Instance) -> Label:
    """Root label at the depot."""
    return Label(last=0, w_pos=0, s=0.0, mask=0, dual_sum=0.0, load=0.0, S=_full_window(inst),
                 Gamma=inst.service[0], D=0.0, F=0.0, cum_dist=0.0, length=0, kind="o")


def _next_mask(variant: RouteVariant, mask: int, i: int, j: int) -> int:
    if variant is RouteVariant.ELEMENTARY:
        return mask | (1 << j)
    if variant is RouteVariant.QROUTE:
        return 1 << j
    return (1 << j) | (1 << i if i else 0)


@lru_cache(maxsize=8)
def _reach_table(inst: Instance) -> tuple[tuple[tuple[float, ...], ...], tuple[float, ...]]:
    """Shortest-path travel times at top speed between all vertices, and latest starts."""
    sp = inst.dist_array.copy()
    for k in range(inst.n + 1):
        sp = np.minimum(sp, sp[:, [k]] + sp[[k], :])
    times = sp / inst.speed_hi
    return tuple(map(tuple, times.tolist())), tuple(inst.b)


def _unreachable(inst: Instance, j: int, load: float, earliest: float) -> int:
    """Customers no walk from ``j`` can still serve, by capacity or by time."""
    times, latest = _reach_table(inst)
    row = times[j]
    bits = 0
    room = inst.Q + 1e-9 - load
    for k in range(1, inst.n + 1):
        if inst.demand[k] > room or earliest + row[k] > latest[k] + 1e-9 * max(1.0, latest[k]):
            bits |= 1 << k
    return bits


def extend_label(inst: Instance, L: Label, j: int, duals: DualValues,
                 variant: RouteVariant = RouteVariant.ELEMENTARY) -> list[Label]:
    """Extend ``L`` to customer ``j``; returns the feasible children.

    Children appear in the order active-at-``a``, active-at-``b``, seamless.
    """
    if j == 0 or (L.mask >> j) & 1:
        return []
    q = inst.demand[j]
    if L.load + q > inst.Q + 1e-9:
        return []
    i = L.last
    d = inst.dist[i][j]
    a_j, b_j, tau_j = inst.a[j], inst.b[j], inst.service[j]
    D = L.D + d
    cum = L.cum_dist + d
    dual_sum = L.dual_sum + float(duals.mu[j]) + float(duals.arc_dual[i][j])
    load = L.load + q
    mask = _next_mask(variant, L.mask, i, j)
    F_load = L.F + inst.cost.load_coeff * q * cum
    pos = L.length + 1
    out = []
    common = dict(last=j, mask=mask, dual_sum=dual_sum, load=load, cum_dist=cum, length=pos, parent=L)
    first = min_rate_cost(D, inst.cost, L.S, AT_MOST, a_j, L.s, L.Gamma)
    if first is not None:
        out.append(Label(w_pos=pos, s=a_j, S=_full_window(inst), Gamma=tau_j, D=0.0,
                         F=F_load + first.value, kind="a", speed=first.speed, **common))
    if b_j > a_j:
        second = min_rate_cost(D, inst.cost, L.S, EXACTLY, b_j, L.s, L.Gamma)
        if second is not None:
            out.append(Label(w_pos=pos, s=b_j, S=_full_window(inst), Gamma=tau_j, D=0.0,
                             F=F_load + second.value, kind="b", speed=second.speed, **common))
    S = intersect_time_window(L.S, D, L.s + L.Gamma, a_j, b_j)
    if not S.empty and D > 0.0:
        out.append(Label(w_pos=L.w_pos, s=L.s, S=S, Gamma=L.Gamma + tau_j, D=D, F=F_load,
                         kind="s", **common))
    for child in out:
        child.mask |= _unreachable(inst, j, load, child.finish(child.S.hi))
    return out


def closing_cost(inst: Instance, L: Label) -> tuple[float, float] | None:
    """Cost of the route obtained by driving ``L`` back to the depot.

    Returns:
        ``(total cost, speed of the final segment)`` or ``None``.
    """
    i = L.last
    D = L.D + inst.dist[i][0]
    wage = inst.cost.wage_rate
    sol = min_rate_cost(D, inst.cost, L.S, AT_MOST, inst.b[0], L.s, L.Gamma, wage)
    if sol is None:
        return None
    return L.F + sol.value + wage * (L.s + L.Gamma), sol.speed


def reduced_cost(L: Label, cost: float, duals: DualValues) -> float:
    return cost - L.dual_sum - float(duals.arc_dual[L.last][0]) - duals.nu


def _chain(L: Label) -> list[Label]:
    out = []
    while L is not None:
        out.append(L)
        L = L.parent
    return out[::-1]


def reconstruct(inst: Instance, L: Label) -> tuple[tuple[int, ...], tuple[int, ...], tuple[float, ...]]:
    """Route, active positions and start times encoded by a label's chain."""
    chain = _chain(L)
    route = tuple(x.last for x in chain) + (0,)
    active = tuple(p for p, x in enumerate(chain) if x.kind in ("a", "b"))
    starts = tuple(chain[p].s for p in active)
    return route, active, starts


def terminate_label(inst: Instance, L: Label, duals: DualValues) -> tuple[Column, float] | None:
    """Close ``L`` at the depot.

    Returns:
        The column with its cost and speed profile, together with its
        reduced cost, or ``None`` when the depot cannot be reached in time.
    """
    if L.last == 0:
        raise ValueError("cannot close a label that sits at the depot")
    closed = closing_cost(inst, L)
    if closed is None:
        return None
    cost = closed[0]
    route, active, starts = reconstruct(inst, L)
    priced = pattern_cost(inst, route, active, starts)
    profile = priced[1] if priced is not None else None
    return Column(route, active, starts, cost, profile), reduced_cost(L, cost, duals)


def _load_penalty(inst: Instance, L1: Label, L2: Label) -> float:
    gamma = inst.cost.load_coeff
    if gamma == 0.0 or L1.cum_dist <= L2.cum_dist:
        return 0.0
    return gamma * (L1.cum_dist - L2.cum_dist) * max(0.0, inst.Q - L2.load)


def _less(x: float, y: float) -> bool:
    return x < y - EPS_DOM * max(1.0, abs(x), abs(y))


def _not_later(t1: float, t2: float) -> bool:
    return t1 <= t2 + EPS_TIME * max(1.0, abs(t2))


def matching_speed(L1: Label, L2: Label, v: float) -> float:
    """Speed on the open segment of ``L1`` that finishes together with ``L2`` at speed ``v``."""
    delta = L2.s + L2.Gamma - L1.s - L1.Gamma
    return L1.D / (L2.D / v + delta)


def z_star(L1: Label, L2: Label, cost: CostFunction) -> float:
    """Largest cost gap ``min C1 - C2(v2)`` over the speeds of ``L2``.

    For each ``v2`` the cheapest ``L1`` speed that finishes no later is
    ``max(v1_min, matching_speed(v2))``; the gap is maximized in closed form over the
    candidate points where its derivative can vanish.

    Raises:
        ValueError: if either label has no open segment or ``L1`` cannot
            finish by the earliest finish of ``L2``.
    """
    if L1.is_point or L2.is_point:
        raise ValueError("z_star needs two labels with open segments")
    lo1, hi1 = L1.S.lo, L1.S.hi
    lo2, hi2 = L2.S.lo, L2.S.hi
    T1, T2 = L1.finish, L2.finish
    if not _not_later(T1(hi1), T2(hi2)):
        raise ValueError("z_star needs T1(v1_max) <= T2(v2_max)")
    C1 = lambda v: L1.prefix_cost(v, cost)  # noqa: E731
    C2 = lambda v: L2.prefix_cost(v, cost)  # noqa: E731
    D1, D2 = L1.D, L2.D
    delta = L2.s + L2.Gamma - L1.s - L1.Gamma

    def paired_gap(v):
        return C1(min(max(matching_speed(L1, L2, v), lo1), hi1)) - C2(v)

    v_star = (D1 - D2) / delta if delta != 0.0 else None
    if T1(lo1) <= T2(hi2):
        return C1(lo1) - C2(lo2)
    if T1(lo1) <= T2(lo2):
        v_tilde = D2 * lo1 / (D1 - delta * lo1)
        cands = [C1(lo1) - C2(lo2), paired_gap(hi2)]
        if v_star is not None and v_tilde <= v_star <= hi2:
            cands.append(paired_gap(v_star))
        return max(cands)
    cands = [paired_gap(lo2), paired_gap(hi2)]
    if v_star is not None and lo2 <= v_star <= hi2:
        cands.append(paired_gap(v_star))
    return max(cands)


def dominates(inst: Instance, L1: Label, L2: Label, check_mask: bool = True) -> bool:
    """True if every completion of ``L2`` is beaten by one reachable from ``L1``.

    Both labels must end at the same vertex. The load-term penalty accounts
    for ``L1`` having driven further with the goods still on board. With
    ``check_mask=False`` the reachable-set condition is skipped, which is
    only suitable for heuristic pricing.
    """
    if L1.last != L2.last:
        raise ValueError("labels must end at the same vertex")
    if (check_mask and L1.mask & ~L2.mask) or L1.load > L2.load + 1e-12:
        return False
    cost = inst.cost
    gap = L1.dual_sum - L2.dual_sum - _load_penalty(inst, L1, L2)
    p1, p2 = L1.is_point, L2.is_point
    if p1 and p2:
        return _not_later(L1.finish(1.0), L2.finish(1.0)) and _less(L1.F, L2.F + gap)
    if not p1 and p2:
        room = L2.finish(1.0) - L1.s - L1.Gamma
        if room <= 0.0:
            return False
        window = L1.S.intersect(L1.D / room, math.inf)
        if window.empty:
            return False
        return _less(L1.prefix_cost(window.lo, cost), L2.F + gap)
    if p1 and not p2:
        if not _not_later(L1.finish(1.0), L2.finish(L2.S.hi)):
            return False
        return _less(L1.F, L2.prefix_cost(L2.S.lo, cost) + gap)
    if not _not_later(L1.finish(L1.S.hi), L2.finish(L2.S.hi)):
        return False
    return _less(z_star(L1, L2, cost), gap)


@dataclass(frozen=True)
class PricingLimits:
    """Knobs of :func:`solve_pricing`.

    Attributes:
        max_columns: Number of most negative columns returned.
        heuristic_eps: Threshold of the early-exit pass.
        max_walk: Cap on customers per walk for relaxed variants
            (``None`` means ``2 n``).
    """

    max_columns: int = 50
    heuristic_eps: float = 1e-3
    max_walk: int | None = None


@dataclass
class PricingResult:
    columns: list[Column]
    reduced_costs: list[float]
    best: float
    exact: bool
    labels: int


def _label_key(L: Label, tick: int) -> tuple:
    return (L.load, L.length, L.last, tick)


def run_labeling(inst: Instance, duals: DualValues, variant: RouteVariant = RouteVariant.ELEMENTARY,
                 forbidden: Iterable[tuple[int, int]] = (), dominance: bool = True,
                 threshold: float = -EPS_RC, stop_after: int | None = None,
                 max_walk: int | None = None,
                 exact_dominance: bool = True) -> tuple[list[tuple[float, Label, float, float]], float, int]:
    """Label-setting pass.

    Returns:
        ``(found, best, labels)`` where ``found`` lists
        ``(reduced cost, label, cost, closing speed)`` for every closed label
        below ``threshold``, ``best`` is the smallest reduced cost of any
        closed label, and ``labels`` counts created labels.
    """
    variant = RouteVariant(variant)
    n = inst.n
    if max_walk is None:
        max_walk = n if variant is RouteVariant.ELEMENTARY else 2 * n
    banned = set(forbidden)
    succ = [[j for j in range(1, n + 1) if j != i and (i, j) not in banned] for i in range(n + 1)]
    can_close = [(i, 0) not in banned for i in range(n + 1)]
    kept: list[list[Label]] = [[] for _ in range(n + 1)]
    heap: list = []
    tick = 0
    root = init_label(inst)
    heapq.heappush(heap, (_label_key(root, tick), root))
    created = 1
    found = []
    best = math.inf
    while heap:
        _, L = heapq.heappop(heap)
        if not L.alive:
            continue
        if L.last != 0 and can_close[L.last]:
            closed = closing_cost(inst, L)
            if closed is not None:
                rc = reduced_cost(L, closed[0], duals)
                best = min(best, rc)
                if rc < threshold:
                    found.append((rc, L, closed[0], closed[1]))
                    if stop_after is not None and len(found) >= stop_after:
                        break
        if L.length >= max_walk:
            continue
        for j in succ[L.last]:
            for child in extend_label(inst, L, j, duals, variant):
                created += 1
                if dominance and not _insert(inst, kept[j], child, exact_dominance):
                    continue
                tick += 1
                heapq.heappush(heap, (_label_key(child, tick), child))
    return found, best, created


def _insert(inst: Instance, bucket: list[Label], new: Label, exact: bool = True) -> bool:
    mask, load = new.mask, new.load
    for old in bucket:
        if (not exact or not old.mask & ~mask) and old.load <= load + 1e-12 \
                and dominates(inst, old, new, exact):
            return False
    survivors = []
    for old in bucket:
        if (not exact or not mask & ~old.mask) and load <= old.load + 1e-12 \
                and dominates(inst, new, old, exact):
            old.alive = False
        else:
            survivors.append(old)
    survivors.append(new)
    bucket[:] = survivors
    return True


def solve_pricing(inst: Instance, duals: DualValues, variant: RouteVariant = RouteVariant.ELEMENTARY,
                  limits: PricingLimits = PricingLimits(), forbidden: Iterable[tuple[int, int]] = (),
                  dominance: bool = True, heuristic: bool = True) -> PricingResult:
    """Columns with reduced cost below ``-EPS_RC``, most negative first.

    A quick pass that stops after ``limits.max_columns`` columns below
    ``-limits.heuristic_eps`` runs first; only if it finds nothing does the
    complete pass run. ``exact`` is set when the complete pass ran, in which
    case an empty list proves that no column prices out.
    """
    forbidden = tuple(forbidden)
    found, best, labels, exact = [], math.inf, 0, False
    if heuristic:
        found, best, labels = run_labeling(inst, duals, variant, forbidden, dominance,
                                           -limits.heuristic_eps, limits.max_columns, limits.max_walk,
                                           exact_dominance=False)
    if not found:
        found, best, more = run_labeling(inst, duals, variant, forbidden, dominance, -EPS_RC,
                                         None, limits.max_walk)
        labels += more
        exact = True
    found.sort(key=lambda item: (item[0], item[1].length))
    columns, rcs, seen = [], [], set()
    for rc, L, cost, _ in found:
        route, active, starts = reconstruct(inst, L)
        key = (route, active, starts)
        if key in seen:
            continue
        seen.add(key)
        priced = pattern_cost(inst, route, active, starts)
        profile = priced[1] if priced is not None else None
        columns.append(Column(route, active, starts, cost, profile))
        rcs.append(rc)
        if len(columns) >= limits.max_columns:
            break
    return PricingResult(columns, rcs, best, exact, labels)


def column_reduced_cost(col: Column, duals: DualValues) -> float:
    """Reduced cost of an existing column under ``duals``."""
    rc = col.cost - duals.nu
    for i, j in zip(col.route, col.route[1:]):
        rc -= float(duals.arc_dual[i][j])
        if j:
            rc -= float(duals.mu[j])
    return rc


def enumerate_walks(inst: Instance, variant: RouteVariant, max_len: int,
                    forbidden: Sequence[tuple[int, int]] = ()) -> list[tuple[int, ...]]:
    """All walks allowed by ``variant`` with at most ``max_len`` customers and feasible load."""
    variant = RouteVariant(variant)
    banned = set(forbidden)
    out = []

    def grow(walk, load):
        if len(walk) > 1 and (walk[-1], 0) not in banned:
            out.append(walk + (0,))
        if len(walk) - 1 >= max_len:
            return
        for j in range(1, inst.n + 1):
            i = walk[-1]
            if j == i or (i, j) in banned or load + inst.demand[j] > inst.Q + 1e-9:
                continue
            if variant is RouteVariant.ELEMENTARY and j in walk:
                continue
            if variant is RouteVariant.TWO_CYCLE_FREE and len(walk) >= 2 and walk[-2] == j:
                continue
            grow(walk + (j,), load + inst.demand[j])

    grow((0,), 0.0)
    return out
