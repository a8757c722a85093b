import math

import numpy as np
import pytest

from conftest import toy_instance
from jrsp.model import generate_instance
from jrsp.oracles import interior_speed_violations, route_patterns
from jrsp.sop import brute_force_oracle, optimal_route_cost, pattern_cost, simulate

V_F = 0.1015 / 0.0072


def f(v):
    return 0.0036 * v * v - 0.1015 * v + 0.8848


class TestPatternCost:
    def test_active_at_earliest_start(self):
        inst = toy_instance(a=[0.0, 12.0], b=[100.0, 80.0])
        cost, profile = pattern_cost(inst, (0, 1, 0), [1], [12.0])
        # reaching customer 1 by time 12 needs 200/12 > v_F; the way home is free
        v1 = 200.0 / 12.0
        assert profile.speeds == pytest.approx((v1, V_F))
        assert cost == pytest.approx(200.0 * f(v1) + 200.0 * f(V_F))

    def test_no_active_customer_is_one_uniform_speed(self):
        inst = toy_instance(a=[0.0, 12.0], b=[100.0, 80.0])
        cost, profile = pattern_cost(inst, (0, 1, 0), [], [])
        grid = np.arange(V_F, 20.0, 1e-5)
        ok = (200.0 / grid >= 12.0) & (200.0 / grid <= 80.0) & (400.0 / grid + 1.0 <= 100.0)
        assert profile.speeds[0] == pytest.approx(profile.speeds[1])
        assert cost == pytest.approx(float((400.0 * f(grid[ok])).min()), rel=1e-8)

    def test_over_capacity(self):
        inst = toy_instance(n=2, Q=8.0, demand=[0, 5, 5], a=[0, 0, 0], b=[100, 100, 100], service=[0, 1, 1],
                            dist=[[0, 100, 100], [100, 0, 100], [100, 100, 0]])
        assert pattern_cost(inst, (0, 1, 2, 0), [], []) is None
        assert optimal_route_cost(inst, (0, 1, 2, 0)) is None

    def test_start_time_must_be_a_window_end(self):
        with pytest.raises(ValueError):
            pattern_cost(toy_instance(), (0, 1, 0), [1], [3.0])


class TestOptimalRouteCost:
    def test_wide_windows_use_the_fuel_minimizer(self, toy):
        opt = optimal_route_cost(toy, (0, 1, 0))
        assert opt.profile.speeds == pytest.approx((V_F, V_F))
        assert opt.cost == pytest.approx(400.0 * f(V_F))

    def test_unreachable_window_is_infeasible(self):
        inst = toy_instance(b=[100.0, 5.0])
        assert optimal_route_cost(inst, (0, 1, 0)) is None
        assert math.isinf(brute_force_oracle(inst, (0, 1, 0)))

    def test_three_customer_route_matches_oracle(self):
        inst = generate_instance(5, K=2, family="short", window_width=0.4, seed=8)
        for route in [(0, 1, 2, 3, 0), (0, 5, 4, 1, 0), (0, 3, 2, 5, 0)]:
            opt = optimal_route_cost(inst, route)
            ref = brute_force_oracle(inst, route)
            if opt is None:
                assert math.isinf(ref)
            else:
                assert opt.cost == pytest.approx(ref, rel=1e-4)
                assert opt.cost <= ref + 1e-9 * ref

    def test_is_the_best_pattern(self):
        rng = np.random.default_rng(4)
        for seed in range(8):
            inst = generate_instance(4, K=2, family=("deep", "short", "uk_like")[seed % 3], window_width=0.3,
                                     seed=seed)
            route = (0,) + tuple(int(v) for v in rng.permutation(np.arange(1, 5))[:3]) + (0,)
            opt = optimal_route_cost(inst, route)
            values = []
            for pattern in route_patterns(route):
                active = [p for p, tag in enumerate(pattern, start=1) if tag]
                starts = [inst.a[route[p]] if pattern[p - 1] == "a" else inst.b[route[p]] for p in active]
                res = pattern_cost(inst, route, active, starts)
                if res is not None:
                    values.append(res[0])
                    assert res[0] >= opt.cost - 1e-9 * max(1.0, opt.cost)
            if opt is None:
                assert not values
            else:
                assert min(values) == pytest.approx(opt.cost, rel=1e-12)

    def test_profile_structure(self):
        rng = np.random.default_rng(6)
        seen = 0
        for seed in range(30):
            inst = generate_instance(5, K=2, family=("deep", "short", "uk_like")[seed % 3], window_width=0.3,
                                     seed=seed)
            route = (0,) + tuple(int(v) for v in rng.permutation(np.arange(1, 6))[: rng.integers(1, 6)]) + (0,)
            opt = optimal_route_cost(inst, route)
            if opt is None:
                continue
            seen += 1
            p = opt.profile
            assert not interior_speed_violations(inst, p)
            assert min(p.speeds) >= inst.v_lo - 1e-9
            assert max(p.speeds) <= inst.speed_hi + 1e-9
            assert all(w >= -1e-9 for w in p.waits)
            for pos, v in enumerate(route):
                assert inst.a[v] - 1e-6 <= p.starts[pos] or pos == 0
                assert p.starts[pos] <= inst.b[v] + 1e-6
            sim = simulate(inst, route, p.speeds)
            assert sim is not None and sim[0] == pytest.approx(opt.cost, rel=1e-9)
        assert seen >= 10


class TestBruteForceOracle:
    def test_wide_windows(self, toy):
        ref = brute_force_oracle(toy, (0, 1, 0), refine_rounds=3)
        assert ref == pytest.approx(400.0 * f(V_F), rel=1e-4)

    def test_forced_arrival(self):
        # customer 1 opens and closes at 12.5: both arcs forced to 16 on the way out
        inst = toy_instance(a=[0.0, 12.5], b=[100.0, 12.5])
        ref = brute_force_oracle(inst, (0, 1, 0))
        assert ref == pytest.approx(200.0 * f(16.0) + 200.0 * f(V_F), rel=1e-4)

    def test_never_increases_with_refinement(self):
        inst = generate_instance(4, K=1, family="short", window_width=0.3, seed=2)
        route = (0, 1, 2, 3, 4, 0)
        values = [brute_force_oracle(inst, route, refine_rounds=r) for r in range(4)]
        assert all(x >= y - 1e-12 for x, y in zip(values, values[1:]))
