"""Speed optimization over a fixed route.

A route is a vertex sequence ``(0, i_1, ..., i_h, 0)``. Between two
consecutive active customers (served exactly at ``a`` or ``b``) an optimal
speed vector is uniform, so the cost of a pattern decomposes into one convex
one-dimensional problem per segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .convex1d import AT_MOST, EPS_T, EXACTLY, SpeedWindow, intersect_time_window, min_rate_cost
from .model import Instance

Route = tuple


@dataclass(frozen=True)
class SpeedProfile:
    """Speeds per arc and service start times per route position.

    ``starts[0]`` is the depot departure (0) and ``starts[-1]`` the return
    time. ``arrivals[p]`` is the arrival time at position ``p``; waiting at
    ``p`` is ``starts[p] - arrivals[p]``.
    """

    route: tuple[int, ...]
    speeds: tuple[float, ...]
    starts: tuple[float, ...]
    arrivals: tuple[float, ...]
    cost: float

    @property
    def waits(self) -> tuple[float, ...]:
        return tuple(s - t for s, t in zip(self.starts, self.arrivals))


class RouteOptimum(NamedTuple):
    cost: float
    active: tuple[int, ...]
    starts: tuple[float, ...]
    profile: SpeedProfile


def check_route(inst: Instance, route: Sequence[int]) -> tuple[int, ...]:
    route = tuple(int(v) for v in route)
    if len(route) < 3 or route[0] != 0 or route[-1] != 0:
        raise ValueError(f"route must start and end at the depot and visit a customer: {route}")
    if any(not 1 <= v <= inst.n for v in route[1:-1]):
        raise ValueError(f"route visits an unknown customer or the depot mid-way: {route}")
    return route


def route_load(inst: Instance, route: Sequence[int]) -> float:
    return sum(inst.demand[v] for v in route)


def load_cost(inst: Instance, route: Sequence[int]) -> float:
    """Load term: each unit of demand pays for the distance it rides along."""
    gamma = inst.cost.load_coeff
    if gamma == 0.0:
        return 0.0
    total, travelled = 0.0, 0.0
    for p in range(1, len(route) - 1):
        travelled += inst.dist[route[p - 1]][route[p]]
        total += inst.demand[route[p]] * travelled
    return gamma * total


def _segment(inst: Instance, route, w: int, s: float, k: int, arrival: str, T: float,
             time_weight: float = 0.0):
    """Cheapest uniform speed from position ``w`` (service start ``s``) to ``k``.

    Positions strictly between are seamless. Returns ``(speed, value,
    travel_start_offset)`` with the offset being the service time spent from
    ``w`` through ``k - 1``, or ``None`` when infeasible.
    """
    dist, a, b, tau = inst.dist, inst.a, inst.b, inst.service
    S = SpeedWindow(inst.v_lo, inst.speed_hi)
    D = 0.0
    elapsed = tau[route[w]]
    for p in range(w + 1, k):
        D += dist[route[p - 1]][route[p]]
        S = intersect_time_window(S, D, s + elapsed, a[route[p]], b[route[p]])
        if S.empty:
            return None
        elapsed += tau[route[p]]
    D += dist[route[k - 1]][route[k]]
    sol = min_rate_cost(D, inst.cost, S, arrival, T, s, elapsed, time_weight)
    if sol is None:
        return None
    return sol.speed, sol.value, elapsed


def _check_start(inst: Instance, vertex: int, t: float) -> str:
    a, b = inst.a[vertex], inst.b[vertex]
    tol = EPS_T * max(1.0, abs(t))
    if abs(t - a) <= tol:
        return "a"
    if abs(t - b) <= tol:
        return "b"
    raise ValueError(f"start time {t} at vertex {vertex} is neither a={a} nor b={b}")


def pattern_cost(inst: Instance, route: Sequence[int], active: Sequence[int],
                 starts: Sequence[float]) -> tuple[float, SpeedProfile] | None:
    """Cost of a route with the given active positions and their start times.

    ``active`` holds positions in ``1..h+1`` (``h+1`` is the return to the
    depot) and ``starts`` the matching service start times, each equal to
    the ``a`` or ``b`` of that vertex. Non-active customers are seamless:
    same speed in and out and no waiting.

    Returns:
        ``(cost, profile)``, or ``None`` if the pattern is infeasible or the
        route exceeds the vehicle capacity.
    """
    route = check_route(inst, route)
    if route_load(inst, route) > inst.Q + EPS_T:
        return None
    h = len(route) - 2
    if len(active) != len(starts):
        raise ValueError("active and starts must have equal length")
    pairs = sorted(zip((int(p) for p in active), (float(t) for t in starts)))
    if any(not 1 <= p <= h + 1 for p, _ in pairs) or len({p for p, _ in pairs}) != len(pairs):
        raise ValueError(f"active positions must be distinct values in 1..{h + 1}")
    for p, t in pairs:
        _check_start(inst, route[p], t)
    wage = inst.cost.wage_rate
    if not pairs or pairs[-1][0] != h + 1:
        pairs.append((h + 1, None))

    speeds = [0.0] * (h + 1)
    arrivals = [0.0] * (h + 2)
    begins = [0.0] * (h + 2)
    w, s = 0, 0.0
    for k, t in pairs:
        if t is None:
            seg = _segment(inst, route, w, s, k, AT_MOST, inst.b[0], wage)
        else:
            mode = AT_MOST if _check_start(inst, route[k], t) == "a" else EXACTLY
            seg = _segment(inst, route, w, s, k, mode, t)
        if seg is None:
            return None
        v = seg[0]
        clock = s
        for p in range(w + 1, k + 1):
            clock += inst.service[route[p - 1]] + inst.dist[route[p - 1]][route[p]] / v
            speeds[p - 1] = v
            arrivals[p] = clock
            begins[p] = clock
        if t is not None:
            begins[k] = t
        w, s = k, begins[k]
    total = profile_cost(inst, route, speeds, begins[h + 1])
    return total, SpeedProfile(route, tuple(speeds), tuple(begins), tuple(arrivals), total)


def profile_cost(inst: Instance, route: Sequence[int], speeds: Sequence[float], end: float) -> float:
    """Fuel over all arcs plus wage on the return time plus the load term."""
    rate = inst.cost.rate
    fuel = 0.0
    for p in range(1, len(route)):
        d = inst.dist[route[p - 1]][route[p]]
        if d:
            fuel += d * rate(speeds[p - 1])
    return fuel + inst.cost.wage_rate * end + load_cost(inst, route)


def optimal_route_cost(inst: Instance, route: Sequence[int]) -> RouteOptimum | None:
    """Minimum cost of a route over all speed vectors.

    Forward dynamic program over route positions. A state is an active
    position together with its start time (``a`` or ``b``); extending a
    state to a later position ``k`` makes everything in between seamless,
    exactly like the three-way label extension used in pricing restricted to
    one sequence. Keeping only the cheapest cost per state is exact because
    the future of a route depends on the past only through the last active
    position and its start time.

    Returns:
        The optimum with its active positions, their start times and the
        speed profile, or ``None`` if no feasible speed vector exists.
    """
    route = check_route(inst, route)
    if route_load(inst, route) > inst.Q + EPS_T:
        return None
    h = len(route) - 2
    a, b = inst.a, inst.b
    # state key: (position, start time) -> (fuel so far, predecessor key)
    best: dict[tuple[int, float], tuple[float, tuple | None]] = {(0, 0.0): (0.0, None)}
    order = [(0, 0.0)]
    for k in range(1, h + 1):
        vertex = route[k]
        for start, mode in ((a[vertex], AT_MOST), (b[vertex], EXACTLY)):
            key = (k, start)
            for prev in order:
                w, s = prev
                seg = _segment(inst, route, w, s, k, mode, start)
                if seg is None:
                    continue
                value = best[prev][0] + seg[1]
                if key not in best or value < best[key][0]:
                    best[key] = (value, prev)
            if key in best and key not in order:
                order.append(key)
    # close the route; the depot return may itself be active at b_0
    wage = inst.cost.wage_rate
    candidates = []
    for prev in order:
        w, s = prev
        seg = _segment(inst, route, w, s, h + 1, AT_MOST, b[0], wage)
        if seg is not None:
            candidates.append((best[prev][0] + seg[1] + wage * (s + seg[2]), prev, False))
        seg = _segment(inst, route, w, s, h + 1, EXACTLY, b[0])
        if seg is not None:
            candidates.append((best[prev][0] + seg[1] + wage * b[0], prev, True))
    if not candidates:
        return None
    _, prev, depot_active = min(candidates, key=lambda c: c[0])
    chain = []
    while prev is not None and prev[0] != 0:
        chain.append(prev)
        prev = best[prev][1]
    chain.reverse()
    active = [p for p, _ in chain]
    starts = [t for _, t in chain]
    if depot_active:
        active.append(h + 1)
        starts.append(b[0])
    cost, profile = pattern_cost(inst, route, active, starts)
    return RouteOptimum(cost, tuple(active), tuple(starts), profile)


def simulate(inst: Instance, route: Sequence[int], speeds: Sequence[float],
             tol: float = 1e-6) -> tuple[float, tuple[float, ...]] | None:
    """Drive a route at the given speeds, waiting only when early.

    Returns ``(cost, starts)`` or ``None`` if a window, the capacity or a
    speed bound is violated (with absolute-relative tolerance ``tol``).
    """
    route = check_route(inst, route)
    if route_load(inst, route) > inst.Q + tol:
        return None
    if len(speeds) != len(route) - 1:
        raise ValueError("need one speed per arc")
    lo, hi = inst.v_lo, inst.speed_hi
    t = 0.0
    starts = [0.0]
    for p in range(1, len(route)):
        v = speeds[p - 1]
        if not lo - tol * lo <= v <= hi + tol * hi:
            return None
        i, j = route[p - 1], route[p]
        arrive = t + inst.service[i] + inst.dist[i][j] / v
        if arrive > inst.b[j] + tol * max(1.0, abs(inst.b[j])):
            return None
        t = arrive if p == len(route) - 1 else max(arrive, inst.a[j])
        starts.append(t)
    return profile_cost(inst, route, speeds, t), tuple(starts)


def brute_force_oracle(inst: Instance, route: Sequence[int], coarse_step: float = 0.25,
                       refine_rounds: int = 4, shrink: int = 8, half_width: int = 16,
                       time_resolution: float = 1e-7) -> float:
    """Grid-search reference value for :func:`optimal_route_cost`.

    Each arc gets its own speed grid; all grid combinations are explored by
    a forward sweep that keeps, per route position, the Pareto front of
    (service start time, cost so far), which is exact for the grid because
    starting earlier never hurts the remainder of the route. Front points
    whose cost plus a lower bound on the rest of the route exceeds the best
    known value are dropped. After the coarse sweep every grid is replaced
    by a finer one centred on the incumbent speed of its arc. The incumbent
    is always kept on the new grid, so the value never increases across
    rounds. Fronts are thinned to one point per start-time bucket of width
    ``time_resolution * b_0``, keeping the cheapest point, which bounds the
    extra error by the marginal value of time times the bucket width.

    Returns:
        Best value found, ``inf`` when no grid point is feasible.
    """
    route = check_route(inst, route)
    if route_load(inst, route) > inst.Q + EPS_T:
        return math.inf
    lo, hi = inst.v_lo, inst.speed_hi
    base = np.unique(np.concatenate([np.arange(lo, hi, coarse_step), [hi]]))
    best, best_speeds = math.inf, None
    for v in base:
        sim = simulate(inst, route, [v] * (len(route) - 1), tol=EPS_T)
        if sim is not None and sim[0] < best:
            best, best_speeds = sim[0] - load_cost(inst, route), [v] * (len(route) - 1)
    grids = [base] * (len(route) - 1)
    step = coarse_step
    for _ in range(refine_rounds + 1):
        value, speeds = _grid_sweep(inst, route, grids, best, time_resolution * max(1.0, inst.b[0]))
        if value < best:
            best, best_speeds = value, speeds
        if best_speeds is None:
            return math.inf
        step /= shrink
        offsets = step * np.arange(-half_width, half_width + 1)
        grids = [np.unique(np.clip(np.append(v + offsets, v), lo, hi)) for v in best_speeds]
    return best + load_cost(inst, route)


def _grid_sweep(inst: Instance, route, grids, bound=math.inf, bucket=0.0):
    a, b, tau, dist = inst.a, inst.b, inst.service, inst.dist
    rate = np.vectorize(inst.cost.rate, otypes=[float])
    wage = inst.cost.wage_rate
    last = len(route) - 1
    # lower bound on fuel and duration still ahead after reaching position p
    legs = [dist[route[p - 1]][route[p]] for p in range(1, last + 1)]
    fmin = inst.cost.rate(inst.v_f)
    fuel_ahead = np.concatenate([np.cumsum(legs[::-1])[::-1], [0.0]])[1:] * fmin
    time_ahead = [sum(tau[route[q]] for q in range(p, last)) + sum(legs[p:]) / inst.speed_hi
                  for p in range(1, last + 1)]
    slack = 1e-9 * max(1.0, abs(bound))
    times = np.zeros(1)
    costs = np.zeros(1)
    history = []
    for p in range(1, last + 1):
        i, j = route[p - 1], route[p]
        grid = grids[p - 1]
        d = dist[i][j]
        arrive = (times + tau[i])[:, None] + d / grid[None, :]
        total = costs[:, None] + (d * rate(grid))[None, :]
        ok = arrive <= b[j] + EPS_T * max(1.0, abs(b[j]))
        if p == last:
            total = total + wage * arrive
            total = np.where(ok, total, np.inf)
            flat = int(np.argmin(total))
            if not np.isfinite(total.flat[flat]):
                return math.inf, None
            parent, g = divmod(flat, grid.size)
            speeds = [grid[g]]
            for grid_k, parents, picks in reversed(history):
                speeds.append(grid_k[picks[parent]])
                parent = parents[parent]
            return float(total.flat[flat]), speeds[::-1]
        idx = np.flatnonzero(ok)
        start = np.maximum(arrive.flat[idx], a[j])
        cost = total.flat[idx]
        optimistic = cost + fuel_ahead[p - 1] + wage * (start + time_ahead[p - 1])
        alive = optimistic <= bound + slack
        idx, start, cost = idx[alive], start[alive], cost[alive]
        if idx.size == 0:
            return math.inf, None
        order = np.lexsort((cost, start))
        start, cost, idx = start[order], cost[order], idx[order]
        prior = np.minimum.accumulate(np.concatenate([[np.inf], cost[:-1]]))
        keep = cost < prior
        start, cost, idx = start[keep], cost[keep], idx[keep]
        if bucket > 0 and start.size > 1:
            cell = np.floor(start / bucket)
            last_in_cell = np.append(cell[1:] != cell[:-1], True)
            start, cost, idx = start[last_in_cell], cost[last_in_cell], idx[last_in_cell]
        parents, picks = np.divmod(idx, grid.size)
        history.append((grid, parents, picks))
        times, costs = start, cost
    raise AssertionError("unreachable")
