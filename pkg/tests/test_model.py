import json
import math

import numpy as np
import pytest

from conftest import toy_instance
from jrsp.model import (
    PRP,
    CostFunction,
    DomainError,
    InfeasibleInstance,
    ParseError,
    ValidationError,
    generate_instance,
    parse_instance,
    rate_eval,
    tighten_time_windows,
    tighten_time_windows_report,
)
from jrsp.sop import simulate

TOY_JSON = {
    "n": 1, "K": 1, "Q": 10, "speed_lo": 14, "speed_hi": 20,
    "cost": {"kind": "quadratic_rate", "coeffs": [0.0036, -0.1015, 0.8848]},
    "vertices": [
        {"id": 0, "demand": 0, "a": 0, "b": 100, "service": 0},
        {"id": 1, "demand": 5, "a": 0, "b": 80, "service": 1},
    ],
    "dist": [[0, 200], [200, 0]],
}

UK_TXT = """\
# two customers, PRP fuel
2 1 100 11.1 27.7
COST prp 1.42e-3 1.98e-7
WAGE 0.0022
0 0 0 40000 0 0 0
1 10 0 40000 600 3000 4000
2 20 0 40000 600 0 8000
"""


class TestParsing:
    def test_smallest_canonical_json(self):
        inst = parse_instance(json.dumps(TOY_JSON))
        assert inst.n == 1 and len(inst.demand) == 2
        assert inst.K == 1 and inst.Q == 10.0 and inst.demand[1] == 5.0

    def test_demand_above_capacity_is_rejected(self):
        doc = json.loads(json.dumps(TOY_JSON))
        doc["vertices"][1]["demand"] = 11
        with pytest.raises(ValidationError, match="demand exceeds capacity"):
            parse_instance(json.dumps(doc))

    def test_empty_window_is_rejected(self):
        doc = json.loads(json.dumps(TOY_JSON))
        doc["vertices"][1]["a"] = 90
        with pytest.raises(ValidationError, match="a > b"):
            parse_instance(json.dumps(doc))

    def test_malformed_json_reports_line(self):
        with pytest.raises(ParseError) as info:
            parse_instance('{"n": 1,\n "K": }')
        assert info.value.line == 2

    def test_missing_key_names_the_field(self):
        doc = dict(TOY_JSON)
        del doc["dist"]
        with pytest.raises(ParseError) as info:
            parse_instance(json.dumps(doc))
        assert info.value.field == "dist"

    def test_uk_text_carries_prp_coefficients(self):
        inst = parse_instance(UK_TXT, "uk_prp_txt")
        assert inst.cost.kind == PRP
        assert inst.cost.coeffs == (1.42e-3, 1.98e-7)
        assert inst.cost.wage_rate == 0.0022
        assert inst.dist[1][2] == pytest.approx(math.hypot(3000, 4000))

    def test_text_bad_number_reports_line_and_field(self):
        bad = UK_TXT.replace("1 10 0 40000", "1 ten 0 40000")
        with pytest.raises(ParseError) as info:
            parse_instance(bad, "uk_prp_txt")
        assert info.value.line == 6 and info.value.field == "q"

    def test_maritime_text_with_matrix(self):
        text = "1 1 10 14 20\n0 0 0 100 0 0 0\n1 5 0 80 1 0 0\nMATRIX\n0 200\n200 0\n"
        inst = parse_instance(text, "maritime_txt")
        assert inst.dist == ((0.0, 200.0), (200.0, 0.0))
        assert inst.cost == CostFunction.maritime()

    def test_json_round_trip(self):
        inst = generate_instance(5, K=2, seed=3)
        again = parse_instance(inst.to_json())
        assert again.to_json() == inst.to_json()

    def test_non_convex_rate_is_rejected(self):
        with pytest.raises(ValidationError):
            CostFunction("quadratic_rate", (-1.0, 0.0, 1.0))


class TestRate:
    def test_maritime_at_sixteen(self):
        f, _ = rate_eval(CostFunction.maritime(), 16.0)
        assert f == pytest.approx(0.1824, abs=1e-12)

    def test_maritime_minimizer_is_stationary(self):
        cost = CostFunction.maritime()
        v_f = 0.1015 / 0.0072
        assert cost.free_minimizer() == pytest.approx(v_f)
        assert rate_eval(cost, v_f)[1] == pytest.approx(0.0, abs=1e-14)

    def test_prp_minimizer_is_stationary(self):
        cost = CostFunction.prp(1.42e-3, 1.98e-7)
        v_f = (1.42e-3 / (2 * 1.98e-7)) ** (1 / 3)
        assert v_f == pytest.approx(15.31, abs=5e-3)
        assert cost.free_minimizer() == pytest.approx(v_f)
        assert abs(rate_eval(cost, v_f)[1]) < 1e-15
        # derivative changes sign around the minimizer
        assert cost.rate_prime(v_f - 0.01) < 0 < cost.rate_prime(v_f + 0.01)

    def test_non_positive_speed(self):
        with pytest.raises(DomainError):
            rate_eval(CostFunction.maritime(), 0.0)

    def test_midpoint_convexity(self):
        rng = np.random.default_rng(0)
        for cost in (CostFunction.maritime(), CostFunction.prp()):
            for x, y in rng.uniform(10.0, 30.0, size=(100, 2)):
                assert cost.rate((x + y) / 2) < (cost.rate(x) + cost.rate(y)) / 2

    def test_effective_lower_speed(self):
        inst = toy_instance()
        assert inst.v_lo == pytest.approx(0.1015 / 0.0072)
        assert toy_instance(speed_lo=15.0).v_lo == 15.0


def chain_instance(b2: float) -> "object":
    """Depot, customer 1 fixed at time 10, customer 2 100 away from 1."""
    dist = [[0.0, 200.0, 300.0], [200.0, 0.0, 100.0], [300.0, 100.0, 0.0]]
    return toy_instance(n=2, K=1, Q=20.0, demand=[0, 5, 5], a=[0, 10, 0], b=[100, 10, b2],
                        service=[0, 1, 1], dist=dist)


class TestTightening:
    def test_raises_earliest_start_from_predecessor(self):
        inst = chain_instance(60.0)
        out = tighten_time_windows(inst)
        # customer 2 directly from the depot at top speed: 300 / 20 = 15;
        # through customer 1: 10 + 1 + 100 / 20 = 16. The minimum over predecessors is 15.
        assert out.a[2] == pytest.approx(15.0)

    def test_fixpoint_is_unchanged(self):
        out = tighten_time_windows(chain_instance(60.0))
        again = tighten_time_windows(out)
        assert again.a == out.a and again.b == out.b

    def test_impossible_window_reports_vertex(self):
        # customer 2 must be served by time 14 but cannot be reached before 15
        with pytest.raises(InfeasibleInstance) as info:
            tighten_time_windows(chain_instance(14.0))
        assert info.value.vertex == 2

    def test_windows_never_widen_and_pass_count_is_bounded(self):
        for seed in range(20):
            inst = generate_instance(5, K=2, family=("deep", "short", "uk_like")[seed % 3], seed=seed)
            out, passes = tighten_time_windows_report(inst)
            assert all(x >= y - 1e-12 for x, y in zip(out.a, inst.a))
            assert all(x <= y + 1e-12 for x, y in zip(out.b, inst.b))
            assert passes <= 4 * inst.n + 1

    def test_feasible_routes_stay_feasible(self):
        rng = np.random.default_rng(11)
        checked = 0
        for seed in range(100):
            inst = generate_instance(4, K=2, family=("deep", "short", "uk_like")[seed % 3],
                                     window_width=0.2, seed=seed)
            out = tighten_time_windows(inst)
            for _ in range(3):
                route = (0,) + tuple(int(v) for v in rng.permutation(np.arange(1, 5))[: rng.integers(1, 5)]) + (0,)
                v = float(rng.uniform(inst.v_lo, inst.speed_hi))
                speeds = [v] * (len(route) - 1)
                if simulate(inst, route, speeds) is not None:
                    checked += 1
                    assert simulate(out, route, speeds) is not None
        assert checked > 20


class TestGenerator:
    def test_single_customer(self):
        for seed in (0, 1, 2**40):
            inst = generate_instance(1, seed=seed)
            assert inst.n == 1 and inst.K == 1

    def test_deterministic(self):
        one = generate_instance(6, K=3, family="uk_like", seed=42)
        two = generate_instance(6, K=3, family="uk_like", seed=42)
        assert one.to_json() == two.to_json()

    def test_uk_like_seed_42_has_a_finite_optimum(self):
        from jrsp.oracles import global_partition_oracle

        inst = generate_instance(6, K=2, family="uk_like", seed=42)
        cost, routes = global_partition_oracle(inst)
        assert math.isfinite(cost) and len(routes) == 2

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            generate_instance(3, family="ocean")
