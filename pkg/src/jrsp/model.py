"""Instance data, fuel-rate functions, file formats, generator and preprocessing.

Vertex 0 is the depot, customers are 1..n. All quantities are kept in the
units of the source file; nothing is rescaled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

QUADRATIC = "quadratic_rate"
PRP = "prp_rate"

MARITIME_COEFFS = (0.0036, -0.1015, 0.8848)
PRP_COEFFS = (1.42e-3, 1.98e-7)

FORMATS = ("canonical_json", "maritime_txt", "uk_prp_txt")


class ParseError(ValueError):
    """Malformed instance text."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ValidationError(ValueError):
    """Instance data violating a model invariant."""


class InfeasibleInstance(ValueError):
    """Time-window preprocessing proved that some vertex cannot be served."""

    def __init__(self, vertex: int, a: float, b: float):
        super().__init__(f"vertex {vertex} has empty time window after tightening: [{a}, {b}]")
        self.vertex = vertex


class DomainError(ValueError):
    """Rate function evaluated at a non-positive speed."""


@dataclass(frozen=True)
class CostFunction:
    """Strictly convex fuel rate per unit distance, plus optional route terms.

    ``quadratic_rate`` uses coefficients ``(c2, c1, c0)`` for
    ``c2 v^2 + c1 v + c0``; ``prp_rate`` uses ``(pi1, pi2)`` for
    ``pi1 / v + pi2 v^2``. ``wage_rate`` is charged per time unit of route
    completion time and ``load_coeff`` per demand unit carried per distance
    unit.
    """

    kind: str
    coeffs: tuple[float, ...]
    wage_rate: float = 0.0
    load_coeff: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.kind == QUADRATIC:
            if len(self.coeffs) != 3:
                raise ValidationError("quadratic_rate needs 3 coefficients (c2, c1, c0)")
            if self.coeffs[0] <= 0:
                raise ValidationError("quadratic_rate needs c2 > 0 for strict convexity")
        elif self.kind == PRP:
            if len(self.coeffs) != 2:
                raise ValidationError("prp_rate needs 2 coefficients (pi1, pi2)")
            if self.coeffs[0] < 0 or self.coeffs[1] < 0 or sum(self.coeffs) == 0:
                raise ValidationError("prp_rate needs pi1, pi2 >= 0, not both zero")
        else:
            raise ValidationError(f"unknown cost kind {self.kind!r}")
        if self.wage_rate < 0 or self.load_coeff < 0:
            raise ValidationError("wage_rate and load_coeff must be >= 0")

    @classmethod
    def maritime(cls) -> "CostFunction":
        return cls(QUADRATIC, MARITIME_COEFFS)

    @classmethod
    def prp(cls, pi1: float = PRP_COEFFS[0], pi2: float = PRP_COEFFS[1],
            wage_rate: float = 0.0, load_coeff: float = 0.0) -> "CostFunction":
        return cls(PRP, (pi1, pi2), wage_rate, load_coeff)

    def rate(self, v: float) -> float:
        if self.kind == QUADRATIC:
            c2, c1, c0 = self.coeffs
            return (c2 * v + c1) * v + c0
        pi1, pi2 = self.coeffs
        return pi1 / v + pi2 * v * v

    def rate_prime(self, v: float) -> float:
        if self.kind == QUADRATIC:
            c2, c1, _ = self.coeffs
            return 2.0 * c2 * v + c1
        pi1, pi2 = self.coeffs
        return -pi1 / (v * v) + 2.0 * pi2 * v

    def rate_second(self, v: float) -> float:
        if self.kind == QUADRATIC:
            return 2.0 * self.coeffs[0]
        pi1, pi2 = self.coeffs
        return 2.0 * pi1 / v**3 + 2.0 * pi2

    def free_minimizer(self) -> float:
        """Minimizer of the rate on (0, inf); 0 when the rate is increasing there."""
        if self.kind == QUADRATIC:
            c2, c1, _ = self.coeffs
            return max(0.0, -c1 / (2.0 * c2))
        pi1, pi2 = self.coeffs
        if pi2 == 0:
            return math.inf
        return (pi1 / (2.0 * pi2)) ** (1.0 / 3.0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "coeffs": list(self.coeffs),
            "wage_rate": self.wage_rate,
            "load_coeff": self.load_coeff,
        }


def rate_eval(cost: CostFunction, v: float) -> tuple[float, float]:
    """Return ``(f(v), f'(v))``."""
    if not v > 0:
        raise DomainError(f"speed must be positive, got {v}")
    return cost.rate(v), cost.rate_prime(v)


@lru_cache(maxsize=256)
def time_weighted_minimizer(cost: CostFunction, time_weight: float, lo: float, hi: float) -> float:
    """Minimizer of ``f(v) + time_weight / v`` over ``[lo, hi]``.

    The objective is strictly convex, so the minimizer is the root of its
    derivative when that root lies inside the interval and an endpoint
    otherwise.
    """
    if time_weight == 0.0:
        return min(max(cost.free_minimizer(), lo), hi)

    def g(v):
        return cost.rate_prime(v) - time_weight / (v * v)

    if g(lo) >= 0:
        return lo
    if g(hi) <= 0:
        return hi
    left, right = lo, hi
    for _ in range(200):
        mid = 0.5 * (left + right)
        if g(mid) > 0:
            right = mid
        else:
            left = mid
        if right - left <= 1e-15 * right:
            break
    return 0.5 * (left + right)


@dataclass(frozen=True, eq=False)
class Instance:
    """A JRSP instance. Immutable; safe to share between threads."""

    n: int
    K: int
    Q: float
    demand: tuple[float, ...]
    a: tuple[float, ...]
    b: tuple[float, ...]
    service: tuple[float, ...]
    dist: tuple[tuple[float, ...], ...]
    speed_lo: float
    speed_hi: float
    cost: CostFunction
    name: str = "instance"

    def __post_init__(self):
        n = self.n
        for attr in ("demand", "a", "b", "service"):
            value = tuple(float(x) for x in getattr(self, attr))
            object.__setattr__(self, attr, value)
            if len(value) != n + 1:
                raise ValidationError(f"{attr} must have n+1 = {n + 1} entries, got {len(value)}")
        dist = tuple(tuple(float(x) for x in row) for row in self.dist)
        object.__setattr__(self, "dist", dist)
        if len(dist) != n + 1 or any(len(row) != n + 1 for row in dist):
            raise ValidationError(f"dist must be {n + 1}x{n + 1}")
        if n < 1:
            raise ValidationError("need at least one customer")
        if self.K < 1:
            raise ValidationError("fleet size K must be >= 1")
        if not self.Q > 0:
            raise ValidationError("capacity Q must be positive")
        if not 0 < self.speed_lo <= self.speed_hi:
            raise ValidationError("speed bounds must satisfy 0 < speed_lo <= speed_hi")
        if self.a[0] != 0:
            raise ValidationError("depot window must open at time 0")
        if self.demand[0] != 0 or self.service[0] != 0:
            raise ValidationError("depot demand and service time must be 0")
        for i in range(n + 1):
            if self.a[i] > self.b[i]:
                raise ValidationError(f"time window of vertex {i} is empty: a > b")
            if self.demand[i] < 0 or self.service[i] < 0:
                raise ValidationError(f"negative demand or service time at vertex {i}")
            if self.demand[i] > self.Q:
                raise ValidationError(f"demand exceeds capacity at vertex {i}")
            for j in range(n + 1):
                if i != j and not dist[i][j] >= 0:
                    raise ValidationError(f"negative distance d[{i}][{j}]")
        samples = np.linspace(self.speed_lo, self.speed_hi, 32)
        if any(self.cost.rate_second(float(v)) <= 0 for v in samples):
            raise ValidationError("rate function is not strictly convex on [speed_lo, speed_hi]")

    @property
    def vertices(self) -> range:
        return range(self.n + 1)

    @property
    def customers(self) -> range:
        return range(1, self.n + 1)

    @cached_property
    def v_f(self) -> float:
        """Rate minimizer clamped into the speed bounds."""
        return min(max(self.cost.free_minimizer(), self.speed_lo), self.speed_hi)

    @cached_property
    def v_lo(self) -> float:
        """Effective lower speed bound; slower travel is never optimal."""
        return max(self.speed_lo, self.v_f)

    @cached_property
    def dist_array(self) -> np.ndarray:
        arr = np.array(self.dist, dtype=float)
        arr.setflags(write=False)
        return arr

    def with_windows(self, a: Sequence[float], b: Sequence[float]) -> "Instance":
        return replace(self, a=tuple(a), b=tuple(b))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "K": self.K,
            "Q": self.Q,
            "speed_lo": self.speed_lo,
            "speed_hi": self.speed_hi,
            "cost": {
                "kind": self.cost.kind,
                "coeffs": list(self.cost.coeffs),
                "wage_rate": self.cost.wage_rate,
                "load_coeff": self.cost.load_coeff,
            },
            "vertices": [
                {"id": i, "demand": self.demand[i], "a": self.a[i], "b": self.b[i],
                 "service": self.service[i]}
                for i in self.vertices
            ],
            "dist": [list(row) for row in self.dist],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# parsing


def parse_instance(text: str | bytes, format: str = "canonical_json", name: str | None = None) -> Instance:
    """Parse instance text in one of :data:`FORMATS`.

    Raises:
        ParseError: malformed syntax, with line and field where known.
        ValidationError: well-formed data violating an instance invariant.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if format in ("canonical_json", "json"):
        return _parse_json(text, name)
    if format in ("maritime_txt", "maritime"):
        return _parse_txt(text, CostFunction.maritime(), name)
    if format in ("uk_prp_txt", "uk"):
        return _parse_txt(text, CostFunction.prp(), name)
    raise ParseError(f"unknown format {format!r}")


def _number(value, field_name, line=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError("expected a number", line=line, field=field_name)
    return float(value)


def _parse_json(text: str, name: str | None) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    for key in ("n", "K", "Q", "speed_lo", "speed_hi", "cost", "vertices", "dist"):
        if key not in doc:
            raise ParseError("missing key", field=key)
    n = doc["n"]
    K = doc["K"]
    if not isinstance(n, int) or not isinstance(K, int):
        raise ParseError("n and K must be integers", field="n" if not isinstance(n, int) else "K")
    cost_doc = doc["cost"]
    if not isinstance(cost_doc, dict) or "kind" not in cost_doc or "coeffs" not in cost_doc:
        raise ParseError("cost needs kind and coeffs", field="cost")
    cost = CostFunction(
        cost_doc["kind"],
        tuple(_number(c, "cost.coeffs") for c in cost_doc["coeffs"]),
        _number(cost_doc.get("wage_rate", 0.0), "cost.wage_rate"),
        _number(cost_doc.get("load_coeff", 0.0), "cost.load_coeff"),
    )
    verts = doc["vertices"]
    if not isinstance(verts, list) or len(verts) != n + 1:
        raise ParseError(f"vertices must list n+1 = {n + 1} entries", field="vertices")
    by_id = {}
    for v in verts:
        try:
            by_id[int(v["id"])] = v
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError("vertex entry needs an integer id", field="vertices") from exc
    if sorted(by_id) != list(range(n + 1)):
        raise ParseError("vertex ids must be 0..n", field="vertices")
    rows = {}
    for key in ("demand", "a", "b", "service"):
        rows[key] = [_number(by_id[i].get(key), f"vertices[{i}].{key}") for i in range(n + 1)]
    dist = doc["dist"]
    if not isinstance(dist, list) or len(dist) != n + 1:
        raise ParseError("dist must have n+1 rows", field="dist")
    matrix = []
    for i, row in enumerate(dist):
        if not isinstance(row, list) or len(row) != n + 1:
            raise ParseError(f"dist row {i} must have n+1 entries", field="dist")
        matrix.append([_number(x, f"dist[{i}]") for x in row])
    return Instance(
        n=n, K=K, Q=_number(doc["Q"], "Q"),
        demand=rows["demand"], a=rows["a"], b=rows["b"], service=rows["service"],
        dist=matrix,
        speed_lo=_number(doc["speed_lo"], "speed_lo"),
        speed_hi=_number(doc["speed_hi"], "speed_hi"),
        cost=cost,
        name=name or str(doc.get("name", "instance")),
    )


def _parse_txt(text: str, default_cost: CostFunction, name: str | None) -> Instance:
    """Plain-text layout shared by the maritime and UK importers.

    ::

        n K Q l u
        COST kind c1 c2 ...      (optional keyword lines)
        WAGE w
        LOAD g
        id q a b tau x y         (n+1 vertex lines, ids 0..n)
        MATRIX                   (optional; then n+1 rows of n+1 distances)

    Blank lines and ``#`` comments are ignored. Without a ``MATRIX`` section
    distances are Euclidean between the ``(x, y)`` coordinates.
    """
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            lines.append((lineno, stripped.split()))
    if not lines:
        raise ParseError("empty instance file")

    def floats(tokens, lineno, names):
        out = []
        for tok, nm in zip(tokens, names):
            try:
                out.append(float(tok))
            except ValueError as exc:
                raise ParseError(f"cannot parse {tok!r} as a number", line=lineno, field=nm) from exc
        return out

    lineno, header = lines[0]
    if len(header) != 5:
        raise ParseError("header must be 'n K Q l u'", line=lineno)
    try:
        n, K = int(header[0]), int(header[1])
    except ValueError as exc:
        raise ParseError("n and K must be integers", line=lineno, field="n/K") from exc
    Q, lo, hi = floats(header[2:], lineno, ("Q", "l", "u"))

    kind, coeffs = default_cost.kind, default_cost.coeffs
    wage, load = default_cost.wage_rate, default_cost.load_coeff
    vertices: dict[int, list[float]] = {}
    matrix: list[list[float]] | None = None
    idx = 1
    while idx < len(lines):
        lineno, tokens = lines[idx]
        key = tokens[0].upper()
        if key == "COST":
            if len(tokens) < 3:
                raise ParseError("COST needs a kind and coefficients", line=lineno)
            kind = {"QUADRATIC": QUADRATIC, "PRP": PRP}.get(tokens[1].upper(), tokens[1])
            coeffs = tuple(floats(tokens[2:], lineno, [f"coeff{k}" for k in range(len(tokens) - 2)]))
        elif key == "WAGE":
            (wage,) = floats(tokens[1:2], lineno, ("wage",)) if len(tokens) == 2 else _bad(lineno, "WAGE w")
        elif key == "LOAD":
            (load,) = floats(tokens[1:2], lineno, ("load",)) if len(tokens) == 2 else _bad(lineno, "LOAD g")
        elif key == "MATRIX":
            rows = lines[idx + 1: idx + 2 + n]
            if len(rows) != n + 1:
                raise ParseError("MATRIX section needs n+1 rows", line=lineno)
            matrix = []
            for r_lineno, r_tokens in rows:
                if len(r_tokens) != n + 1:
                    raise ParseError("matrix row needs n+1 entries", line=r_lineno)
                matrix.append(floats(r_tokens, r_lineno, [f"d{k}" for k in range(n + 1)]))
            idx += n + 1
        else:
            if len(tokens) != 7:
                raise ParseError("vertex line must be 'id q a b tau x y'", line=lineno)
            try:
                vid = int(tokens[0])
            except ValueError as exc:
                raise ParseError("vertex id must be an integer", line=lineno, field="id") from exc
            if vid in vertices:
                raise ParseError(f"duplicate vertex id {vid}", line=lineno, field="id")
            vertices[vid] = floats(tokens[1:], lineno, ("q", "a", "b", "tau", "x", "y"))
        idx += 1
    if sorted(vertices) != list(range(n + 1)):
        raise ParseError(f"need vertex lines for ids 0..{n}")
    if matrix is None:
        xy = np.array([[vertices[i][4], vertices[i][5]] for i in range(n + 1)])
        matrix = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1]).tolist()
    return Instance(
        n=n, K=K, Q=Q,
        demand=[vertices[i][0] for i in range(n + 1)],
        a=[vertices[i][1] for i in range(n + 1)],
        b=[vertices[i][2] for i in range(n + 1)],
        service=[vertices[i][3] for i in range(n + 1)],
        dist=matrix, speed_lo=lo, speed_hi=hi,
        cost=CostFunction(kind, coeffs, wage, load),
        name=name or "instance",
    )


def _bad(lineno, expected):
    raise ParseError(f"expected '{expected}'", line=lineno)


def load_instance(path, format: str | None = None) -> Instance:
    """Read an instance file; the format defaults from the file suffix."""
    from pathlib import Path

    path = Path(path)
    if format is None:
        format = "canonical_json" if path.suffix.lower() == ".json" else "maritime_txt"
    return parse_instance(path.read_bytes(), format, name=path.stem)


# ---------------------------------------------------------------------------
# time-window tightening


def tighten_time_windows(inst: Instance) -> Instance:
    """Shrink customer windows to the fixpoint of the four propagation rules.

    Speeds are bounded by ``[inst.v_lo, inst.speed_hi]`` on every arc. The
    depot keeps its window; it acts as a predecessor departing at time 0 and
    as a successor accepting arrivals in ``[a_0, b_0]``.

    Raises:
        InfeasibleInstance: some customer ends up with ``a_k > b_k``.
    """
    return tighten_time_windows_report(inst)[0]


def tighten_time_windows_report(inst: Instance, tol: float = 1e-9) -> tuple[Instance, int]:
    """Like :func:`tighten_time_windows`, also returning the number of passes."""
    n = inst.n
    d = inst.dist_array
    tau = np.array(inst.service)
    a = np.array(inst.a)
    b = np.array(inst.b)
    lo, hi = inst.v_lo, inst.speed_hi
    fast = d / hi
    slow = d / lo
    off_diag = ~np.eye(n + 1, dtype=bool)
    passes = 0
    while True:
        passes += 1
        changed = False
        dep_a = a.copy()
        dep_a[0] = 0.0
        dep_b = b.copy()
        dep_b[0] = 0.0
        for k in range(1, n + 1):
            preds = off_diag[:, k]
            succs = off_diag[k, :]
            cand = np.min((dep_a + tau + fast[:, k])[preds])
            if cand > a[k] + tol:
                a[k] = cand
                changed = True
            cand = np.min((a - slow[k, :] - tau[k])[succs])
            if cand > a[k] + tol:
                a[k] = cand
                changed = True
            cand = max(a[k], np.max((dep_b + tau + slow[:, k])[preds]))
            if cand < b[k] - tol:
                b[k] = cand
                changed = True
            cand = np.max((b - fast[k, :] - tau[k])[succs])
            if cand < b[k] - tol:
                b[k] = cand
                changed = True
            if a[k] > b[k] + tol:
                raise InfeasibleInstance(k, float(a[k]), float(b[k]))
            dep_a[k], dep_b[k] = a[k], b[k]
        if not changed:
            break
    b = np.maximum(a, b)
    return inst.with_windows(a.tolist(), b.tolist()), passes


# ---------------------------------------------------------------------------
# generator

FAMILIES = ("deep", "short", "uk_like")


def generate_instance(n: int, K: int = 2, Q: float = 100.0, family: str = "short",
                      window_width: float = 0.3, seed: int = 0) -> Instance:
    """Random instance with a guaranteed feasible solution.

    Customers are packed into ``min(K, n)`` routes first, each route is
    simulated at the speed limit and windows (and the horizon) are widened
    where that reference solution would miss them. The output is a pure
    function of the arguments.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    K = max(1, min(K, n))

    if family == "deep":
        centers = np.array([[0.0, 0.0], [6000.0, 1500.0]])
        which = rng.integers(0, 2, size=n + 1)
        which[0] = 0
        xy = centers[which] + rng.normal(0.0, 400.0, size=(n + 1, 2))
        cost = CostFunction.maritime()
        lo, hi = 14.0, 20.0
        service = rng.uniform(12.0, 48.0, size=n + 1)
    elif family == "short":
        xy = rng.uniform(0.0, 600.0, size=(n + 1, 2))
        cost = CostFunction.maritime()
        lo, hi = 14.0, 20.0
        service = rng.uniform(4.0, 16.0, size=n + 1)
    else:
        xy = rng.uniform(0.0, 200_000.0, size=(n + 1, 2))
        cost = CostFunction.prp(wage_rate=0.0022, load_coeff=5e-9)
        lo, hi = 40.0 / 3.6, 100.0 / 3.6
        service = rng.uniform(300.0, 1200.0, size=n + 1)
    service[0] = 0.0
    dist = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    dist = np.round(np.maximum(dist, 1e-3), 3)
    np.fill_diagonal(dist, 0.0)

    per_route = math.ceil(n / K)
    demand = rng.integers(1, max(2, int(1.6 * Q / per_route)) + 1, size=n + 1).astype(float)
    demand = np.minimum(demand, Q)
    demand[0] = 0.0
    routes: list[list[int]] = [[] for _ in range(K)]
    loads = [0.0] * K
    order = sorted(range(1, n + 1), key=lambda i: (-demand[i], i))
    for i in order:
        k = int(np.argmin(loads))
        if loads[k] + demand[i] > Q:
            demand[i] = max(0.0, Q - loads[k])
        routes[k].append(i)
        loads[k] += demand[i]
    for k in range(K):
        if not routes[k]:
            donor = max(range(K), key=lambda j: len(routes[j]))
            routes[k].append(routes[donor].pop())

    v_mid = 0.5 * (max(lo, min(cost.free_minimizer(), hi)) + hi)
    typical = float(np.mean(dist[dist > 0])) / v_mid + float(np.mean(service))
    horizon = max(1.0, 2.5 * typical * per_route)
    width = max(1e-6, window_width) * horizon
    a = np.zeros(n + 1)
    b = np.zeros(n + 1)
    for i in range(1, n + 1):
        w_i = width * rng.uniform(0.5, 1.0)
        start = rng.uniform(0.0, max(0.0, horizon - w_i))
        a[i], b[i] = start, start + w_i

    # a reference solution at the speed limit fixes visiting order by window
    end = 0.0
    for route in routes:
        route.sort(key=lambda i: (a[i], i))
        t, prev = 0.0, 0
        for i in route:
            arrive = t + service[prev] + dist[prev, i] / hi
            if arrive > b[i]:
                b[i] = arrive
            t = max(arrive, a[i])
            prev = i
        end = max(end, t + service[prev] + dist[prev, 0] / hi)
    a[0], b[0] = 0.0, float(max(horizon, end) * 1.05)
    return Instance(
        n=n, K=K, Q=float(Q),
        demand=demand.tolist(), a=a.tolist(), b=b.tolist(), service=service.tolist(),
        dist=dist.tolist(), speed_lo=lo, speed_hi=hi, cost=cost,
        name=f"{family}-{n}-{seed}",
    )
