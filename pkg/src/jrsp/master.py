"""Restricted master problem over route columns.

Rows, in order: one covering row per customer (``>= 1``), the fleet row
(``= K``), rounded capacity cuts (``>= xi``) and branching rows on single
arcs (``>= 1`` or ``<= 1``). Every ``>=`` row and the fleet row carry
penalized artificial columns, so the LP is always feasible; a positive
artificial at column-generation convergence means the node is infeasible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .lp import LPError, solve_standard_form
from .model import Instance
from .pricing import Column, DualValues

log = logging.getLogger(__name__)

REQUIRE = "require"
AT_MOST_ONE = "at_most_one"
FORBID = "forbid"

SUPPORT_THRESHOLD = 0.1
MIN_VIOLATION = 0.01
ARTIFICIAL_TOL = 1e-7

Arc = tuple[int, int]


@dataclass(frozen=True)
class Cut:
    """Rounded capacity inequality: flow leaving ``members`` is at least ``rhs``."""

    members: frozenset[int]
    rhs: float

    def coefficient(self, col: Column) -> int:
        return sum(1 for i, j in zip(col.route, col.route[1:]) if i in self.members and j not in self.members)

    def lhs(self, x: np.ndarray) -> float:
        inside = sorted(self.members)
        outside = [j for j in range(x.shape[0]) if j not in self.members]
        return float(x[np.ix_(inside, outside)].sum())


@dataclass(frozen=True)
class BranchDecision:
    """One arc fixing: ``forbid``, ``require`` (at least once) or ``at_most_one``."""

    kind: str
    arc: Arc

    def __post_init__(self):
        if self.kind not in (FORBID, REQUIRE, AT_MOST_ONE):
            raise ValueError(f"unknown branching kind {self.kind!r}")


def check_decisions(decisions: Iterable[BranchDecision]) -> None:
    """Raise if an arc is both forbidden and required."""
    forbidden = {d.arc for d in decisions if d.kind == FORBID}
    required = {d.arc for d in decisions if d.kind == REQUIRE}
    both = forbidden & required
    if both:
        raise ValueError(f"arcs both forbidden and required: {sorted(both)}")


class ColumnPool:
    """Append-only list of distinct columns shared by all tree nodes."""

    def __init__(self, n: int):
        self.n = n
        self.columns: list[Column] = []
        self._index: dict[tuple, int] = {}
        self._visits: list[np.ndarray] = []
        self._arcs: list[tuple[Arc, ...]] = []

    def __len__(self):
        return len(self.columns)

    def add(self, col: Column) -> bool:
        if col.key in self._index:
            return False
        self._index[col.key] = len(self.columns)
        self.columns.append(col)
        visits = np.zeros(self.n + 1)
        for v in col.route[1:-1]:
            visits[v] += 1
        self._visits.append(visits)
        self._arcs.append(tuple(zip(col.route, col.route[1:])))
        return True

    def visits(self, k: int) -> np.ndarray:
        return self._visits[k]

    def arcs(self, k: int) -> tuple[Arc, ...]:
        return self._arcs[k]


@dataclass
class RmpSolution:
    objective: float
    z: dict[int, float]
    duals: DualValues
    artificial: float
    x: np.ndarray
    iterations: int


@dataclass
class RmpState:
    """Master LP of one tree node over a shared column pool.

    Attributes:
        inst: The instance.
        pool: Shared column pool.
        cuts: Active capacity cuts (shared across nodes).
        decisions: Branching decisions of this node.
        penalty: Cost of artificial columns.
    """

    inst: Instance
    pool: ColumnPool
    cuts: list[Cut] = field(default_factory=list)
    decisions: list[BranchDecision] = field(default_factory=list)
    penalty: float | None = None
    _basis_ids: list | None = field(default=None, repr=False)

    def __post_init__(self):
        check_decisions(self.decisions)
        if self.penalty is None:
            self.penalty = default_penalty(self.inst)

    @property
    def forbidden(self) -> set[Arc]:
        return {d.arc for d in self.decisions if d.kind == FORBID}

    def branch_rows(self) -> list[BranchDecision]:
        return [d for d in self.decisions if d.kind != FORBID]

    def active_indices(self) -> list[int]:
        banned = self.forbidden
        if not banned:
            return list(range(len(self.pool)))
        return [k for k in range(len(self.pool)) if not banned.intersection(self.pool.arcs(k))]

    def add_columns(self, cols: Iterable[Column]) -> int:
        return sum(self.pool.add(c) for c in cols)

    def add_cuts(self, cuts: Iterable[Cut]) -> int:
        known = {c.members for c in self.cuts}
        added = 0
        for c in cuts:
            if c.members not in known:
                self.cuts.append(c)
                known.add(c.members)
                added += 1
        return added


def default_penalty(inst: Instance) -> float:
    """Artificial cost: far above any route cost of the instance."""
    f_top = max(inst.cost.rate(inst.v_lo), inst.cost.rate(inst.speed_hi))
    d_top = max(max(row) for row in inst.dist)
    scale = f_top * d_top + inst.cost.wage_rate * inst.b[0]
    return 1e7 * max(scale, 1.0)


def _row_matrix(state: RmpState, cols: Sequence[int]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Coefficients of the given pool columns, right-hand sides and row senses."""
    inst, pool = state.inst, state.pool
    n = inst.n
    branch = state.branch_rows()
    m = n + 1 + len(state.cuts) + len(branch)
    A = np.zeros((m, len(cols)))
    for c, k in enumerate(cols):
        A[:n, c] = pool.visits(k)[1:]
        A[n, c] = 1.0
        arcs = pool.arcs(k)
        for r, cut in enumerate(state.cuts):
            A[n + 1 + r, c] = sum(1 for i, j in arcs if i in cut.members and j not in cut.members)
        for r, dec in enumerate(branch):
            A[n + 1 + len(state.cuts) + r, c] = sum(1 for a in arcs if a == dec.arc)
    b = np.concatenate([np.ones(n), [float(inst.K)], [c.rhs for c in state.cuts], np.ones(len(branch))])
    senses = [">="] * n + ["="] + [">="] * len(state.cuts) + [">=" if d.kind == REQUIRE else "<=" for d in branch]
    return A, b, senses


def solve_rmp_lp(state: RmpState) -> RmpSolution:
    """Solve the node LP and return primal values, duals and arc flows.

    The basis of the previous call is reused when it is still valid; rows
    added since then start with their artificial (or slack) basic.
    """
    inst = state.inst
    n = inst.n
    cols = state.active_indices()
    A_cols, b, senses = _row_matrix(state, cols)
    m = len(b)
    blocks = [A_cols]
    costs = [np.array([state.pool.columns[k].cost for k in cols])]
    ids: list = [("col", state.pool.columns[k].key) for k in cols]
    slack_of, art_of = {}, {}
    # surplus / slack columns
    for r, sense in enumerate(senses):
        if sense == "=":
            continue
        e = np.zeros((m, 1))
        e[r, 0] = -1.0 if sense == ">=" else 1.0
        slack_of[r] = len(ids)
        blocks.append(e)
        costs.append(np.zeros(1))
        ids.append(("slack", r, _row_id(state, r)))
    # artificials
    for r, sense in enumerate(senses):
        if sense == "<=":
            continue
        e = np.zeros((m, 1))
        e[r, 0] = 1.0
        art_of[r] = len(ids)
        blocks.append(e)
        costs.append(np.array([state.penalty]))
        ids.append(("art", r, _row_id(state, r)))
    e = np.zeros((m, 1))
    e[n, 0] = -1.0
    blocks.append(e)
    costs.append(np.array([state.penalty]))
    ids.append(("art-", n, "fleet"))
    A = np.hstack(blocks)
    c = np.concatenate(costs)
    artificial_cols = np.array([isinstance(i, tuple) and i[0] in ("art", "art-") for i in ids])

    cold = [art_of[r] if senses[r] != "<=" else slack_of[r] for r in range(m)]
    start = _warm_basis(state, ids, senses, art_of, slack_of) or cold
    try:
        res = solve_standard_form(c, A, b, start, artificial=artificial_cols)
    except LPError:
        if start is cold:
            raise
        log.debug("warm start rejected, restarting from the artificial basis")
        res = solve_standard_form(c, A, b, cold, artificial=artificial_cols)
    state._basis_ids = ([ids[k] for k in res.basis], {_row_id(state, r) for r in range(m)})

    z = {cols[k]: float(res.x[k]) for k in range(len(cols)) if res.x[k] > 1e-12}
    y = res.y
    mu = np.concatenate([[0.0], y[:n]])
    nu = float(y[n])
    arc_dual = np.zeros((n + 1, n + 1))
    for r, cut in enumerate(state.cuts):
        pi = float(y[n + 1 + r])
        if pi == 0.0:
            continue
        inside = sorted(cut.members)
        outside = [j for j in range(n + 1) if j not in cut.members]
        arc_dual[np.ix_(inside, outside)] += pi
    for r, dec in enumerate(state.branch_rows()):
        arc_dual[dec.arc] += float(y[n + 1 + len(state.cuts) + r])
    artificial = float(res.x[artificial_cols].sum())
    x = compute_arc_values(state, z)
    return RmpSolution(res.objective, z, DualValues(mu, nu, arc_dual), artificial, x, res.iterations)


def _row_id(state: RmpState, r: int):
    n = state.inst.n
    if r < n:
        return ("cover", r + 1)
    if r == n:
        return "fleet"
    r -= n + 1
    if r < len(state.cuts):
        return ("cut", state.cuts[r].members)
    return ("branch", state.branch_rows()[r - len(state.cuts)])


def _warm_basis(state, ids, senses, art_of, slack_of):
    """Previous optimal basis extended by the artificial/slack of new rows."""
    if not state._basis_ids:
        return None
    old_basis, old_rows = state._basis_ids
    where = {_stable(ident): k for k, ident in enumerate(ids)}
    basis = []
    for ident in old_basis:
        k = where.get(_stable(ident))
        if k is None:
            return None
        basis.append(k)
    for r, sense in enumerate(senses):
        if _row_id(state, r) not in old_rows:
            basis.append(art_of[r] if sense != "<=" else slack_of[r])
    if len(basis) != len(senses) or len(set(basis)) != len(basis):
        return None
    return basis


def _stable(ident):
    if ident[0] in ("art", "slack", "art-"):
        return (ident[0], ident[2])
    return ident


def compute_arc_values(state: RmpState, z: dict[int, float]) -> np.ndarray:
    """Arc flows ``x[i][j]`` summed over columns weighted by their LP values."""
    n = state.inst.n
    x = np.zeros((n + 1, n + 1))
    for k, val in z.items():
        for a in state.pool.arcs(k):
            x[a] += val
    return x


def rounded_capacity_rhs(inst: Instance, members: Iterable[int]) -> float:
    q = sum(inst.demand[i] for i in members)
    return float(max(1, math.ceil(q / inst.Q - 1e-9)))


def separate_rci(inst: Instance, x: np.ndarray, threshold: float = SUPPORT_THRESHOLD,
                 min_violation: float = MIN_VIOLATION) -> list[Cut]:
    """Violated rounded capacity inequalities found by a greedy heuristic.

    Candidate sets are the connected components of the customer support
    graph (edges with ``x_ij + x_ji >= threshold``) and sets grown greedily
    from each component and from each single customer by adding the
    customer that most increases the violation.
    """
    n = inst.n
    demand = np.asarray(inst.demand, dtype=float)
    sym = x + x.T
    adj = sym[1:, 1:] >= threshold
    seen = np.zeros(n + 1, dtype=bool)
    seeds: list[frozenset[int]] = []
    for s in range(1, n + 1):
        if seen[s]:
            continue
        comp, stack = {s}, [s]
        seen[s] = True
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i - 1]) + 1:
                if not seen[j]:
                    seen[j] = True
                    comp.add(int(j))
                    stack.append(int(j))
        seeds.append(frozenset(comp))
    seeds += [frozenset([i]) for i in range(1, n + 1)]

    def violation(S: frozenset[int]) -> float:
        inside = np.fromiter(S, dtype=int)
        mask = np.ones(n + 1, dtype=bool)
        mask[inside] = False
        leaving = x[np.ix_(inside, np.flatnonzero(mask))].sum()
        need = max(1, math.ceil(demand[inside].sum() / inst.Q - 1e-9))
        return need - leaving

    found: dict[frozenset[int], float] = {}
    for seed in dict.fromkeys(seeds):
        S = seed
        v = violation(S)
        while True:
            if v >= min_violation and S not in found:
                found[S] = v
            if len(S) >= n:
                break
            options = [(violation(S | {j}), j) for j in range(1, n + 1) if j not in S]
            best_v, best_j = max(options, key=lambda t: (t[0], -t[1]))
            if best_v < v - 1e-12 and v >= min_violation:
                break
            S, v = S | {best_j}, best_v
    cuts = [Cut(S, rounded_capacity_rhs(inst, S)) for S in found]
    cuts.sort(key=lambda c: (-found[c.members], len(c.members), sorted(c.members)))
    return cuts


def apply_branching(state: RmpState, decisions: Sequence[BranchDecision]) -> RmpState:
    """Child state with extra branching decisions (pool and cuts are shared)."""
    merged = list(state.decisions) + [d for d in decisions if d not in state.decisions]
    check_decisions(merged)
    return RmpState(state.inst, state.pool, state.cuts, merged, state.penalty)
