"""Branch-cut-and-price tree search.

Each node runs column generation on its restricted master, optionally adds
rounded capacity cuts, and either closes (pruned, infeasible or integral) or
branches on arc flows. Bounds are reported the usual way: the best lower
bound over open nodes and the best feasible solution found.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .master import (
    AT_MOST_ONE,
    ARTIFICIAL_TOL,
    FORBID,
    REQUIRE,
    BranchDecision,
    ColumnPool,
    RmpState,
    check_decisions,
    separate_rci,
    solve_rmp_lp,
)
from .model import InfeasibleInstance, Instance, tighten_time_windows
from .pricing import Column, PricingLimits, RouteVariant, solve_pricing
from .sop import SpeedProfile, optimal_route_cost, simulate

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time_limit"

PRUNE_TOL = 1e-6
INT_TOL = 1e-6


@dataclass(frozen=True)
class BcpOptions:
    """Solver settings.

    Attributes:
        variant: Route relaxation used in pricing.
        time_limit: Wall-clock budget in seconds.
        cuts_on: Separate rounded capacity cuts.
        max_cols_per_iter: Columns added per pricing call.
        node_selection: ``"best_bound"`` or ``"dfs"``.
        max_cut_rounds: Cut rounds per node.
        dominance: Use label dominance in pricing.
        tighten: Shrink time windows before solving.
    """

    variant: RouteVariant = RouteVariant.ELEMENTARY
    time_limit: float = math.inf
    cuts_on: bool = True
    max_cols_per_iter: int = 50
    node_selection: str = "best_bound"
    max_cut_rounds: int = 5
    dominance: bool = True
    tighten: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", RouteVariant(self.variant))
        if self.node_selection not in ("best_bound", "dfs"):
            raise ValueError(f"unknown node selection {self.node_selection!r}")


@dataclass
class BcpNode:
    decisions: tuple[BranchDecision, ...]
    bound: float
    depth: int


@dataclass
class Solution:
    """Result of :func:`solve_bcp`.

    ``blb`` is the best lower bound, ``bub`` the cost of the best solution
    found (``inf`` if none).
    """

    status: str
    blb: float
    bub: float
    routes: list[SpeedProfile]
    nodes: int = 0
    columns: int = 0
    cuts: int = 0
    seconds: float = 0.0
    root_bound: float = math.nan
    timings: dict = field(default_factory=dict)

    @property
    def cost(self) -> float:
        return self.bub

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "blb": _finite(self.blb),
            "bub": _finite(self.bub),
            "routes": [
                {"seq": list(p.route), "speeds": list(p.speeds), "starts": list(p.starts), "cost": p.cost}
                for p in self.routes
            ],
            "stats": {"nodes": self.nodes, "columns": self.columns, "cuts": self.cuts,
                      "seconds": self.seconds},
        }


def _finite(v: float):
    return v if math.isfinite(v) else None


@dataclass
class _NodeOutcome:
    bound: float
    infeasible: bool = False
    timed_out: bool = False
    children: list[tuple[BranchDecision, ...]] = field(default_factory=list)
    incumbent: list[tuple[int, ...]] | None = None


class _Search:
    def __init__(self, inst: Instance, options: BcpOptions, deadline: float):
        self.inst = inst
        self.options = options
        self.deadline = deadline
        self.pool = ColumnPool(inst.n)
        self.cuts: list = []
        self.limits = PricingLimits(max_columns=options.max_cols_per_iter)
        self.best_routes: list[SpeedProfile] = []
        self.bub = math.inf
        self.timings = {"lp": 0.0, "pricing": 0.0, "separation": 0.0}
        for i in inst.customers:
            self._seed((0, i, 0))
        routes = insertion_routes(inst)
        for r in routes:
            self._seed(r)
        if len(routes) == inst.K:
            self.offer(routes)

    def _seed(self, route):
        opt = optimal_route_cost(self.inst, route)
        if opt is not None:
            self.pool.add(Column(opt.profile.route, opt.active, opt.starts, opt.cost, opt.profile))

    def out_of_time(self) -> bool:
        return time.monotonic() > self.deadline

    def process(self, node: BcpNode) -> _NodeOutcome:
        inst, opts = self.inst, self.options
        state = RmpState(inst, self.pool, self.cuts, list(node.decisions))
        forbidden = state.forbidden
        bound = node.bound
        rounds = 0
        clock = self.timings
        while True:
            t0 = time.perf_counter()
            sol = solve_rmp_lp(state)
            t1 = time.perf_counter()
            clock["lp"] += t1 - t0
            if self.out_of_time():
                return _NodeOutcome(bound, timed_out=True)
            priced = solve_pricing(inst, sol.duals, opts.variant, self.limits, forbidden, opts.dominance)
            clock["pricing"] += time.perf_counter() - t1
            if priced.exact and math.isfinite(priced.best):
                bound = max(bound, sol.objective + inst.K * min(0.0, priced.best))
            if bound >= self.bub - PRUNE_TOL:
                return _NodeOutcome(bound)
            if priced.columns:
                state.add_columns(priced.columns)
                continue
            # column generation converged on this row set
            if sol.artificial > ARTIFICIAL_TOL:
                return _NodeOutcome(math.inf, infeasible=True)
            bound = max(bound, sol.objective)
            if bound >= self.bub - PRUNE_TOL:
                return _NodeOutcome(bound)
            if opts.cuts_on and rounds < opts.max_cut_rounds:
                t0 = time.perf_counter()
                found = separate_rci(inst, sol.x)
                clock["separation"] += time.perf_counter() - t0
                if state.add_cuts(found):
                    rounds += 1
                    log.debug("cut round %d added %d cuts", rounds, len(found))
                    continue
            break
        return self.branch_or_close(sol.x, node, bound)

    def branch_or_close(self, x: np.ndarray, node: BcpNode, bound: float) -> _NodeOutcome:
        inst = self.inst
        decisions = node.decisions
        frac = np.abs(x - np.round(x))
        candidates = [(i, j) for i, j in zip(*np.nonzero(frac > INT_TOL))]
        if candidates:
            dist = inst.dist
            i, j = min(candidates, key=lambda a: (abs(frac[a] - 0.5), -dist[a[0]][a[1]], a))
            arc = (int(i), int(j))
            down = (BranchDecision(FORBID, arc),)
            up = (BranchDecision(REQUIRE, arc),)
            if x[arc] > 1.0:
                up += (BranchDecision(AT_MOST_ONE, arc),)
            return _NodeOutcome(bound, children=self._children(decisions, [down, up]))
        xi = np.round(x).astype(int)
        multi = [(int(i), int(j)) for i, j in zip(*np.nonzero(xi[:, 1:] >= 2))]
        if multi:
            arc = (multi[0][0], multi[0][1] + 1)
            down = (BranchDecision(FORBID, arc),)
            up = (BranchDecision(REQUIRE, arc), BranchDecision(AT_MOST_ONE, arc))
            return _NodeOutcome(bound, children=self._children(decisions, [down, up]))
        for j in inst.customers:
            entering = [(int(i), j) for i in np.flatnonzero(xi[:, j] >= 1)]
            if len(entering) >= 2:
                k1, k2 = entering[0], entering[1]
                children = [(BranchDecision(FORBID, k1),), (BranchDecision(FORBID, k2),)]
                return _NodeOutcome(bound, children=self._children(decisions, children))
        routes = decompose(xi)
        return _NodeOutcome(bound, incumbent=routes)

    @staticmethod
    def _children(decisions, extra):
        out = []
        for add in extra:
            merged = tuple(decisions) + tuple(d for d in add if d not in decisions)
            try:
                check_decisions(merged)
            except ValueError:
                continue
            out.append(merged)
        return out

    def offer(self, routes: list[tuple[int, ...]]) -> None:
        profiles = []
        total = 0.0
        for r in routes:
            opt = optimal_route_cost(self.inst, r)
            if opt is None:
                log.warning("integral flow produced an infeasible route %s", r)
                return
            profiles.append(opt.profile)
            total += opt.cost
        if total < self.bub - 1e-9:
            self.bub = total
            self.best_routes = profiles
            log.info("new incumbent %.6f", total)


def insertion_routes(inst: Instance) -> list[tuple[int, ...]]:
    """Cheapest-insertion construction with at most ``K`` routes.

    Customers are taken by increasing window opening. Returns an empty list
    when some customer cannot be inserted anywhere.
    """
    routes: list[tuple[float, tuple[int, ...]]] = []
    for j in sorted(inst.customers, key=lambda v: (inst.a[v], inst.b[v], v)):
        best = None
        options = [(k, r) for k, (_, r) in enumerate(routes)]
        if len(routes) < inst.K:
            options.append((len(routes), (0, 0)))
        for k, r in options:
            base = routes[k][0] if k < len(routes) else 0.0
            for pos in range(1, len(r)):
                cand = r[:pos] + (j,) + r[pos:]
                if sum(inst.demand[v] for v in cand) > inst.Q + 1e-9:
                    break
                opt = optimal_route_cost(inst, cand)
                if opt is not None and (best is None or opt.cost - base < best[0]):
                    best = (opt.cost - base, k, cand, opt.cost)
        if best is None:
            return []
        _, k, cand, cost = best
        if k < len(routes):
            routes[k] = (cost, cand)
        else:
            routes.append((cost, cand))
    return [r for _, r in routes]


def decompose(x_int: np.ndarray) -> list[tuple[int, ...]]:
    """Split an integral arc flow with unit in-flow per customer into depot routes."""
    n = x_int.shape[0] - 1
    succ = {}
    for i in range(1, n + 1):
        outs = np.flatnonzero(x_int[i] >= 1)
        succ[i] = int(outs[0]) if outs.size else None
    routes = []
    for j in np.flatnonzero(x_int[0] >= 1):
        for _ in range(int(x_int[0, j])):
            route = [0, int(j)]
            while route[-1] != 0:
                nxt = succ.get(route[-1])
                if nxt is None or len(route) > n + 1:
                    raise RuntimeError(f"arc flow does not decompose into depot routes at {route}")
                route.append(nxt)
            routes.append(tuple(route))
    return routes


def solve_bcp(inst: Instance, options: BcpOptions | None = None, **overrides) -> Solution:
    """Solve an instance to proven optimality or until the time limit.

    Args:
        inst: Instance to solve.
        options: Solver settings; keyword overrides replace single fields.

    Returns:
        The solution with status, bounds, routes and tree statistics.
    """
    options = options or BcpOptions()
    if overrides:
        options = BcpOptions(**{**options.__dict__, **overrides})
    start = time.monotonic()
    original = inst
    if options.tighten:
        try:
            inst = tighten_time_windows(inst)
        except InfeasibleInstance as exc:
            log.info("time windows are inconsistent: %s", exc)
            return Solution(INFEASIBLE, math.inf, math.inf, [], seconds=time.monotonic() - start)
    search = _Search(inst, options, start + options.time_limit)
    counter = 0
    heap: list = []
    root = BcpNode((), -math.inf, 0)

    def push(node):
        nonlocal counter
        counter += 1
        key = (node.bound, counter) if options.node_selection == "best_bound" else (-node.depth, -counter)
        heapq.heappush(heap, (key, node))

    push(root)
    nodes = 0
    root_bound = math.nan
    timed_out = False
    while heap:
        _, node = heapq.heappop(heap)
        if node.bound >= search.bub - PRUNE_TOL:
            continue
        if search.out_of_time():
            push(node)
            timed_out = True
            break
        outcome = search.process(node)
        nodes += 1
        if nodes == 1:
            root_bound = outcome.bound
        if outcome.timed_out:
            push(BcpNode(node.decisions, outcome.bound, node.depth))
            timed_out = True
            break
        if outcome.infeasible:
            continue
        if outcome.incumbent is not None:
            search.offer(outcome.incumbent)
            continue
        for decisions in outcome.children:
            push(BcpNode(decisions, outcome.bound, node.depth + 1))
    bub = search.bub
    open_bounds = [n.bound for _, n in heap if n.bound < bub - PRUNE_TOL]
    if timed_out:
        blb = min(open_bounds + [bub])
        status = FEASIBLE if math.isfinite(bub) else TIME_LIMIT
    else:
        blb = bub
        status = OPTIMAL if math.isfinite(bub) else INFEASIBLE
    routes = _revalidate(original, search.best_routes)
    return Solution(status, blb, bub, routes, nodes, len(search.pool), len(search.cuts),
                    time.monotonic() - start, root_bound, dict(search.timings))


def _revalidate(inst: Instance, profiles: list[SpeedProfile]) -> list[SpeedProfile]:
    """Re-derive every route on the original instance and check it by simulation."""
    out = []
    for p in profiles:
        opt = optimal_route_cost(inst, p.route)
        if opt is None or abs(opt.cost - p.cost) > 1e-6 * max(1.0, abs(p.cost)):
            raise RuntimeError(f"route {p.route} does not revalidate on the input instance")
        sim = simulate(inst, p.route, opt.profile.speeds)
        if sim is None or abs(sim[0] - opt.cost) > 1e-6 * max(1.0, abs(opt.cost)):
            raise RuntimeError(f"route {p.route} fails simulation")
        out.append(opt.profile)
    return out


def root_lp_bound(inst: Instance, variant: RouteVariant = RouteVariant.ELEMENTARY,
                  cuts_on: bool = False, max_cols_per_iter: int = 50) -> float:
    """Converged root LP value (no branching) for the given route relaxation."""
    options = BcpOptions(variant=variant, cuts_on=cuts_on, max_cols_per_iter=max_cols_per_iter)
    search = _Search(inst, options, math.inf)
    state = RmpState(inst, search.pool, search.cuts, [])
    rounds = 0
    while True:
        sol = solve_rmp_lp(state)
        priced = solve_pricing(inst, sol.duals, options.variant, search.limits)
        if priced.columns:
            state.add_columns(priced.columns)
            continue
        if cuts_on and rounds < options.max_cut_rounds and sol.artificial <= ARTIFICIAL_TOL:
            if state.add_cuts(separate_rci(inst, sol.x)):
                rounds += 1
                continue
        return sol.objective
