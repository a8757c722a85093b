"""Slow reference computations used to cross-check the solver.

None of these share code paths with the pieces they check beyond the
instance model and the per-pattern cost evaluation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .model import CostFunction, Instance
from .pricing import DualValues, Label, RouteVariant, enumerate_walks
from .sop import optimal_route_cost, pattern_cost


def elementary_route_costs(inst: Instance) -> dict[int, tuple[float, tuple[int, ...]]]:
    """Cheapest feasible elementary route per customer subset (bitmask over customers)."""
    best: dict[int, tuple[float, tuple[int, ...]]] = {}
    for h in range(1, inst.n + 1):
        for perm in itertools.permutations(range(1, inst.n + 1), h):
            if sum(inst.demand[i] for i in perm) > inst.Q + 1e-9:
                continue
            route = (0,) + perm + (0,)
            opt = optimal_route_cost(inst, route)
            if opt is None:
                continue
            mask = sum(1 << (i - 1) for i in perm)
            if mask not in best or opt.cost < best[mask][0]:
                best[mask] = (opt.cost, route)
    return best


def global_partition_oracle(inst: Instance) -> tuple[float, list[tuple[int, ...]]]:
    """Optimal cost over all partitions of the customers into exactly ``K`` routes.

    Returns:
        ``(cost, routes)``; cost is ``inf`` and routes empty when infeasible.
    """
    routes = elementary_route_costs(inst)
    full = (1 << inst.n) - 1

    @lru_cache(maxsize=None)
    def solve(mask: int, k: int) -> tuple[float, tuple]:
        if mask == 0:
            return (0.0, ()) if k == 0 else (math.inf, ())
        if k == 0:
            return math.inf, ()
        low = mask & -mask
        best = (math.inf, ())
        sub = mask
        while sub:
            if sub & low and sub in routes:
                rest = solve(mask ^ sub, k - 1)
                value = routes[sub][0] + rest[0]
                if value < best[0]:
                    best = (value, (routes[sub][1],) + rest[1])
            sub = (sub - 1) & mask
        return best

    cost, chosen = solve(full, inst.K)
    return cost, list(chosen)


def route_patterns(route: Sequence[int]):
    """Every (active positions) choice with a/b start labels for a route."""
    h = len(route) - 2
    for choice in itertools.product((None, "a", "b"), repeat=h):
        for depot in (None, "b"):
            yield choice + (depot,)


def best_pattern_cost(inst: Instance, route: Sequence[int]) -> float:
    """Minimum of the per-pattern cost over all patterns of ``route``."""
    best = math.inf
    for pattern in route_patterns(route):
        active, starts = [], []
        for p, tag in enumerate(pattern, start=1):
            if tag is None:
                continue
            v = route[p]
            active.append(p)
            starts.append(inst.a[v] if tag == "a" else inst.b[v])
        res = pattern_cost(inst, route, active, starts)
        if res is not None:
            best = min(best, res[0])
    return best


def exhaustive_pricing(inst: Instance, duals: DualValues, variant: RouteVariant, max_len: int,
                       forbidden: Sequence[tuple[int, int]] = ()) -> float:
    """Smallest reduced cost over every walk and every active pattern."""
    best = math.inf
    for route in enumerate_walks(inst, variant, max_len, forbidden):
        cost = best_pattern_cost(inst, route)
        if not math.isfinite(cost):
            continue
        rc = cost - duals.nu
        for i, j in zip(route, route[1:]):
            rc -= float(duals.arc_dual[i][j]) + (float(duals.mu[j]) if j else 0.0)
        best = min(best, rc)
    return best


def lp_by_vertices(c: np.ndarray, A: np.ndarray, b: np.ndarray) -> float:
    """Optimum of ``min c x, A x = b, x >= 0`` by enumerating all bases (tiny LPs only)."""
    m, N = A.shape
    best = math.inf
    for cols in itertools.combinations(range(N), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-10:
            continue
        xB = np.linalg.solve(B, b)
        if xB.min() < -1e-9:
            continue
        best = min(best, float(c[list(cols)] @ xB))
    return best


def covering_lp(inst: Instance, columns, cuts=()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Standard form of the covering master over ``columns`` (no artificials)."""
    n = inst.n
    rows = n + 1 + len(cuts)
    A = np.zeros((rows, len(columns)))
    for k, col in enumerate(columns):
        for v in col.route[1:-1]:
            A[v - 1, k] += 1
        A[n, k] = 1.0
        for r, cut in enumerate(cuts):
            A[n + 1 + r, k] = cut.coefficient(col)
    surplus = np.zeros((rows, rows - 1))
    for r in range(n):
        surplus[r, r] = -1.0
    for r in range(len(cuts)):
        surplus[n + 1 + r, n + r] = -1.0
    c = np.concatenate([[col.cost for col in columns], np.zeros(rows - 1)])
    b = np.concatenate([np.ones(n), [inst.K], [cut.rhs for cut in cuts]])
    return c, np.hstack([A, surplus]), b


def speed_grid(lo: float, hi: float, step: float) -> np.ndarray:
    if hi - lo <= 0:
        return np.array([lo])
    return np.unique(np.append(np.arange(lo, hi, step), hi))


def _label_grid(L: Label, step: float) -> np.ndarray:
    if L.D == 0.0:
        return np.array([L.S.lo])
    return speed_grid(L.S.lo, L.S.hi, step)


def dominance_by_grid(L1: Label, L2: Label, cost: CostFunction, step: float = 1e-3,
                      slack: float = 0.0) -> bool:
    """Grid check: every speed of ``L2`` is matched by a no-later, strictly cheaper ``L1`` speed."""
    v1 = _label_grid(L1, step)
    v2 = _label_grid(L2, step)
    T1 = L1.s + L1.Gamma + (L1.D / v1 if L1.D else 0.0)
    C1 = L1.F + (L1.D * np.array([cost.rate(v) for v in v1]) if L1.D else 0.0) - L1.dual_sum + slack
    T2 = L2.s + L2.Gamma + (L2.D / v2 if L2.D else 0.0)
    C2 = L2.F + (L2.D * np.array([cost.rate(v) for v in v2]) if L2.D else 0.0) - L2.dual_sum
    T1 = np.broadcast_to(T1, v1.shape)
    C1 = np.broadcast_to(C1, v1.shape)
    for t2, c2 in zip(np.broadcast_to(T2, v2.shape), np.broadcast_to(C2, v2.shape)):
        ok = (T1 <= t2 + 1e-9 * max(1.0, abs(t2))) & (C1 < c2)
        if not ok.any():
            return False
    return True


def psi_grid_max(L1: Label, L2: Label, cost: CostFunction, step: float = 1e-4) -> float:
    """Maximum over a ``v2`` grid of the cheapest no-later ``L1`` cost minus ``C2(v2)``.

    For each ``v2`` the cheapest admissible ``L1`` speed is found by
    bisection on the finish-time constraint (all grid points at once), not
    by the closed form. Grid points that ``L1`` cannot match are skipped.
    """
    lo1, hi1 = L1.S.lo, L1.S.hi
    v2 = speed_grid(L2.S.lo, L2.S.hi, step)
    target = L2.s + L2.Gamma + L2.D / v2
    base = L1.s + L1.Gamma
    reachable = base + L1.D / hi1 <= target
    v2, target = v2[reachable], target[reachable]
    if v2.size == 0:
        return -math.inf
    left = np.full(v2.shape, lo1)
    right = np.full(v2.shape, hi1)
    for _ in range(200):
        mid = 0.5 * (left + right)
        fits = base + L1.D / mid <= target
        right = np.where(fits, mid, right)
        left = np.where(fits, left, mid)
    v1 = np.where(base + L1.D / lo1 <= target, lo1, right)
    gap = (L1.F + L1.D * cost.rate(v1)) - (L2.F + L2.D * cost.rate(v2))
    return float(gap.max())


def interior_speed_violations(inst: Instance, profile, tol: float = 1e-6, margin: float = 1e-7) -> list[int]:
    """Positions served strictly inside their window whose in and out speeds differ.

    A customer counts as interior when its start time is more than
    ``margin`` (relative) away from both window ends.
    """
    bad = []
    route = profile.route
    for p in range(1, len(route) - 1):
        v, t = route[p], profile.starts[p]
        slack = margin * max(1.0, abs(t))
        if inst.a[v] + slack < t < inst.b[v] - slack:
            if abs(profile.speeds[p - 1] - profile.speeds[p]) > tol:
                bad.append(p)
    return bad


@dataclass
class CheckResult:
    suite: str
    trial: int
    passed: bool
    detail: str


def random_duals(inst: Instance, rng: np.random.Generator) -> DualValues:
    """Duals of roughly the right size: customer duals near single-visit route costs."""
    n = inst.n
    mu = np.zeros(n + 1)
    for i in inst.customers:
        opt = optimal_route_cost(inst, (0, i, 0))
        base = opt.cost if opt is not None else 1.0
        mu[i] = base * rng.uniform(0.3, 1.2)
    arc = np.zeros((n + 1, n + 1))
    for _ in range(2):
        i, j = int(rng.integers(0, n + 1)), int(rng.integers(1, n + 1))
        if i != j:
            arc[i, j] = rng.uniform(-0.2, 0.2) * mu[j]
    nu = float(rng.uniform(-0.5, 0.1) * mu[1:].mean())
    return DualValues(mu, nu, arc)


def run_validation(n: int, trials: int, seed: int, families=("deep", "short", "uk_like")) -> list[CheckResult]:
    """Cross-check route costing, pricing and the tree search on generated instances.

    Each trial draws one instance of ``n`` customers and runs three
    comparisons: the route dynamic program against grid search on one random
    route, the labeling optimum against walk enumeration for random duals,
    and the tree-search optimum against partition enumeration.
    """
    from .bcp import solve_bcp
    from .model import generate_instance
    from .pricing import run_labeling
    from .sop import brute_force_oracle

    rng = np.random.default_rng(seed)
    out: list[CheckResult] = []
    for t in range(trials):
        family = families[t % len(families)]
        K = int(rng.integers(1, min(3, n) + 1))
        inst = generate_instance(n, K=K, Q=float(rng.choice([40.0, 60.0, 100.0])), family=family,
                                 window_width=float(rng.choice([0.3, 0.6, 1.0])),
                                 seed=int(rng.integers(0, 2**31 - 1)))
        h = int(rng.integers(1, min(6, n) + 1))
        route = (0,) + tuple(int(v) for v in rng.permutation(np.arange(1, n + 1))[:h]) + (0,)
        opt = optimal_route_cost(inst, route)
        ref = brute_force_oracle(inst, route)
        if opt is None:
            ok = not math.isfinite(ref)
            detail = f"{route}: infeasible, grid {ref}"
        else:
            ok = math.isfinite(ref) and abs(opt.cost - ref) <= 1e-4 * abs(ref)
            detail = f"{route}: dp {opt.cost:.6f} grid {ref:.6f}"
        out.append(CheckResult("route-cost", t, ok, detail))

        duals = random_duals(inst, rng)
        cap = min(n, 4)
        mine = run_labeling(inst, duals, RouteVariant.ELEMENTARY, max_walk=cap)[1]
        if n <= 4:
            ref_rc = exhaustive_pricing(inst, duals, RouteVariant.ELEMENTARY, cap)
        else:
            ref_rc = _walk_minimum(inst, duals, cap)
        same = (not math.isfinite(mine) and not math.isfinite(ref_rc)) or abs(mine - ref_rc) <= 1e-6 * max(1.0, abs(ref_rc))
        out.append(CheckResult("pricing", t, same, f"labels {mine:.6f} enumeration {ref_rc:.6f}"))

        want, _ = global_partition_oracle(inst)
        got = solve_bcp(inst)
        if math.isfinite(want):
            ok = got.status == "optimal" and abs(got.bub - want) <= 1e-3
        else:
            ok = got.status == "infeasible"
        out.append(CheckResult("optimum", t, ok, f"tree {got.bub:.6f} ({got.status}) enumeration {want:.6f}"))
    return out


def _walk_minimum(inst: Instance, duals: DualValues, max_len: int) -> float:
    best = math.inf
    for route in enumerate_walks(inst, RouteVariant.ELEMENTARY, max_len):
        opt = optimal_route_cost(inst, route)
        if opt is None:
            continue
        rc = opt.cost - duals.nu
        for i, j in zip(route, route[1:]):
            rc -= float(duals.arc_dual[i][j]) + (float(duals.mu[j]) if j else 0.0)
        best = min(best, rc)
    return best
