import math

import numpy as np
import pytest

from jrsp.convex1d import SpeedWindow
from jrsp.model import CostFunction, Instance
from jrsp.pricing import Label


def toy_instance(**overrides) -> Instance:
    """One customer, one vehicle, generous windows, maritime fuel."""
    fields = dict(
        n=1, K=1, Q=10.0,
        demand=[0.0, 5.0], a=[0.0, 0.0], b=[100.0, 80.0], service=[0.0, 1.0],
        dist=[[0.0, 200.0], [200.0, 0.0]],
        speed_lo=14.0, speed_hi=20.0, cost=CostFunction.maritime(), name="toy",
    )
    fields.update(overrides)
    return Instance(**fields)


def line_instance(n: int, K: int = 1, Q: float = 100.0, horizon: float = 1000.0, **overrides) -> Instance:
    """Customers on a line 100 apart; every window is ``[0, horizon]``."""
    xs = np.arange(n + 1) * 100.0
    dist = np.abs(xs[:, None] - xs[None, :])
    fields = dict(
        n=n, K=K, Q=Q,
        demand=[0.0] + [10.0] * n, a=[0.0] * (n + 1), b=[horizon] * (n + 1),
        service=[0.0] + [1.0] * n, dist=dist.tolist(),
        speed_lo=14.0, speed_hi=20.0, cost=CostFunction.maritime(), name=f"line-{n}",
    )
    fields.update(overrides)
    return Instance(**fields)


def open_label(lo: float, hi: float, D: float, s: float = 0.0, Gamma: float = 0.0, F: float = 0.0,
               dual_sum: float = 0.0, load: float = 0.0, mask: int = 0, last: int = 1,
               cum_dist: float | None = None) -> Label:
    """Seamless label with an open segment of length ``D`` and speeds ``[lo, hi]``."""
    return Label(last=last, w_pos=0, s=s, mask=mask, dual_sum=dual_sum, load=load, S=SpeedWindow(lo, hi),
                 Gamma=Gamma, D=D, F=F, cum_dist=D if cum_dist is None else cum_dist, length=1, kind="s")


def point_label(s: float, F: float, Gamma: float = 1.0, dual_sum: float = 0.0, load: float = 0.0,
                mask: int = 0, last: int = 1, lo: float = 0.1015 / 0.0072, hi: float = 20.0,
                cum_dist: float = 0.0) -> Label:
    """Label whose last vertex is active (no open segment)."""
    return Label(last=last, w_pos=1, s=s, mask=mask, dual_sum=dual_sum, load=load, S=SpeedWindow(lo, hi),
                 Gamma=Gamma, D=0.0, F=F, cum_dist=cum_dist, length=1, kind="a")


MARITIME_VF = 0.1015 / 0.0072


def random_open_pair(rng: np.random.Generator, lo: float = MARITIME_VF, hi: float = 20.0) -> tuple[Label, Label]:
    """Two open labels where the first can finish no later than the second's earliest finish.

    Speeds live in ``[lo, hi]``, which must start at or above the fuel
    minimizer, as for every label the pricing creates.
    """
    while True:
        pair = []
        for _ in range(2):
            a, b = np.sort(rng.uniform(lo, hi, size=2))
            if rng.random() < 0.3:
                a = lo
            if rng.random() < 0.3:
                b = hi
            pair.append(open_label(float(a), float(b), D=float(rng.uniform(20.0, 400.0)),
                                   s=float(rng.uniform(0.0, 20.0)), Gamma=float(rng.uniform(0.0, 5.0)),
                                   F=float(rng.uniform(0.0, 30.0))))
        L1, L2 = pair
        if L1.finish(L1.S.hi) <= L2.finish(L2.S.hi):
            return L1, L2


def z_branch(L1: Label, L2: Label) -> int:
    """0: L1 is never late at its slowest speed; 1: only late against fast L2; 2: otherwise."""
    if L1.finish(L1.S.lo) <= L2.finish(L2.S.hi):
        return 0
    if L1.finish(L1.S.lo) <= L2.finish(L2.S.lo):
        return 1
    return 2


def balanced_open_pairs(rng: np.random.Generator, count: int) -> list[tuple[Label, Label]]:
    """``count`` random open pairs cycling through the three ``z_branch`` cases."""
    out = []
    while len(out) < count:
        L1, L2 = random_open_pair(rng)
        if z_branch(L1, L2) == len(out) % 3:
            out.append((L1, L2))
    return out


@pytest.fixture
def toy():
    return toy_instance()


@pytest.fixture
def maritime():
    return CostFunction.maritime()


def close(x: float, y: float, rel: float = 1e-9, abs_: float = 1e-9) -> bool:
    if math.isinf(x) or math.isinf(y):
        return x == y
    return abs(x - y) <= max(abs_, rel * max(abs(x), abs(y)))
