import math

import numpy as np
import pytest

from conftest import line_instance
from jrsp.bcp import BcpOptions, decompose, insertion_routes, root_lp_bound, solve_bcp
from jrsp.model import generate_instance
from jrsp.oracles import global_partition_oracle
from jrsp.pricing import RouteVariant
from jrsp.sop import optimal_route_cost, simulate

FAMILIES = ("deep", "short", "uk_like")


def test_single_customer(toy):
    sol = solve_bcp(toy)
    assert sol.status == "optimal"
    assert [p.route for p in sol.routes] == [(0, 1, 0)]
    assert sol.bub == pytest.approx(optimal_route_cost(toy, (0, 1, 0)).cost)
    assert sol.blb == sol.bub


@pytest.mark.parametrize("seed", range(8))
def test_matches_partition_oracle(seed):
    inst = generate_instance(3 + seed % 4, K=1 + seed % 3, family=FAMILIES[seed % 3],
                             window_width=(0.3, 0.6, 1.0)[seed % 3], seed=seed)
    ref, _ = global_partition_oracle(inst)
    sol = solve_bcp(inst)
    if math.isinf(ref):
        assert sol.status == "infeasible"
        return
    assert sol.status == "optimal"
    assert sol.bub == pytest.approx(ref, rel=1e-6)
    assert len(sol.routes) == inst.K
    assert sorted(c for p in sol.routes for c in p.route[1:-1]) == list(inst.customers)
    for p in sol.routes:
        cost, _ = simulate(inst, p.route, p.speeds)
        assert cost == pytest.approx(p.cost, rel=1e-9)
    assert sum(p.cost for p in sol.routes) == pytest.approx(sol.bub, rel=1e-9)


@pytest.mark.parametrize("seed", [1, 3, 17])
def test_instances_that_branch(seed):
    inst = generate_instance(6, K=2, family="short", window_width=0.3, seed=seed)
    ref, _ = global_partition_oracle(inst)
    for selection in ("best_bound", "dfs"):
        sol = solve_bcp(inst, cuts_on=False, node_selection=selection)
        assert sol.nodes > 1
        assert sol.bub == pytest.approx(ref, rel=1e-6)
        assert sol.root_bound <= sol.bub + 1e-6


def test_branching_sweep_matches_partition_oracle():
    branched = 0
    for seed in range(60):
        inst = generate_instance(6, K=2, family="short", window_width=0.3, seed=seed)
        ref, _ = global_partition_oracle(inst)
        sol = solve_bcp(inst, cuts_on=seed % 2 == 0)
        branched += sol.nodes > 1
        assert sol.bub == pytest.approx(ref, abs=1e-6)
    assert branched >= 3


def test_cuts_never_hurt_the_root_bound():
    for seed in range(5):
        inst = generate_instance(6, K=3, Q=40.0, family="deep", window_width=0.8, seed=seed)
        plain = root_lp_bound(inst, cuts_on=False)
        cut = root_lp_bound(inst, cuts_on=True)
        assert cut >= plain - 1e-6 * abs(plain)
        ref, _ = global_partition_oracle(inst)
        assert cut <= ref + 1e-6 * abs(ref)


def test_relaxation_bounds_are_ordered():
    for seed in range(4):
        inst = generate_instance(6, K=2, family=FAMILIES[seed % 3], window_width=0.8, seed=60 + seed)
        q = root_lp_bound(inst, RouteVariant.QROUTE)
        two = root_lp_bound(inst, RouteVariant.TWO_CYCLE_FREE)
        elem = root_lp_bound(inst, RouteVariant.ELEMENTARY)
        assert q <= two + 1e-6 * abs(two)
        assert two <= elem + 1e-6 * abs(elem)


def test_deterministic():
    inst = generate_instance(6, K=2, family="short", window_width=0.3, seed=17)
    one, two = solve_bcp(inst), solve_bcp(inst)
    a, b = one.to_dict(), two.to_dict()
    a["stats"].pop("seconds"), b["stats"].pop("seconds")
    assert a == b


def test_infeasible_fleet():
    # two full loads and a single vehicle
    inst = line_instance(2, K=1, Q=10.0)
    sol = solve_bcp(inst)
    assert sol.status == "infeasible"
    assert sol.routes == [] and math.isinf(sol.bub)


def test_inconsistent_windows_are_caught_up_front():
    inst = line_instance(2, K=2, b=[1000.0, 1.0, 1000.0])
    sol = solve_bcp(inst)
    assert sol.status == "infeasible" and sol.nodes == 0


def test_time_limit_keeps_bounds_ordered():
    inst = generate_instance(7, K=3, family="deep", window_width=0.3, seed=1)
    sol = solve_bcp(inst, time_limit=0.0)
    assert sol.status in ("feasible", "time_limit")
    assert sol.blb <= sol.bub
    if sol.status == "feasible":
        assert sum(p.cost for p in sol.routes) == pytest.approx(sol.bub, rel=1e-9)


def test_options_validation():
    with pytest.raises(ValueError):
        BcpOptions(node_selection="random")
    assert BcpOptions(variant="qroute").variant is RouteVariant.QROUTE


def test_insertion_routes_are_feasible():
    for seed in range(10):
        inst = generate_instance(6, K=3, family=FAMILIES[seed % 3], seed=seed)
        routes = insertion_routes(inst)
        assert all(optimal_route_cost(inst, r) is not None for r in routes)
        seen = [c for r in routes for c in r[1:-1]]
        assert len(seen) == len(set(seen))


def test_decompose_integral_flow():
    x = np.zeros((5, 5))
    for route in [(0, 2, 1, 0), (0, 4, 3, 0)]:
        for i, j in zip(route, route[1:]):
            x[i, j] = 1.0
    assert sorted(decompose(x)) == [(0, 2, 1, 0), (0, 4, 3, 0)]
