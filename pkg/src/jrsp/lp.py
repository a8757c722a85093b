"""Dense revised simplex for ``min c x  s.t.  A x = b, x >= 0``.

The caller supplies a primal feasible starting basis (the master problem
always has one made of artificial and slack columns). The basis inverse is
kept explicitly, updated by one elementary row operation per pivot and
recomputed from scratch every ``refactor_every`` pivots.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

OPT_TOL = 1e-7
PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9


class LPError(RuntimeError):
    """Unbounded problem, singular basis or stalled pivoting."""


@dataclass
class LPResult:
    x: np.ndarray
    y: np.ndarray
    objective: float
    basis: list[int]
    iterations: int


def solve_standard_form(c: np.ndarray, A: np.ndarray, b: np.ndarray, basis: list[int],
                        refactor_every: int = 50, max_iter: int | None = None,
                        artificial: np.ndarray | None = None) -> LPResult:
    """Optimize from a feasible basis.

    Args:
        c: Costs, length ``N``.
        A: ``m x N`` constraint matrix.
        b: Right-hand side, length ``m``.
        basis: ``m`` column indices whose basic solution is nonnegative.
        refactor_every: Pivots between fresh inversions of the basis.
        max_iter: Hard cap on pivots (default ``50 (m + N)``).
        artificial: Boolean mask of penalty columns. Those left basic at
            zero are pivoted out at the end so that the duals are not
            polluted by their large cost.

    Returns:
        Primal values, row duals, objective, final basis and pivot count.

    Raises:
        LPError: on a singular or infeasible start, unboundedness, or when
            degenerate pivoting under Bland's rule exceeds ``10 (m + N)``.
    """
    m, N = A.shape
    basis = list(basis)
    if len(basis) != m:
        raise LPError(f"basis has {len(basis)} columns for {m} rows")
    if max_iter is None:
        max_iter = 50 * (m + N)
    stall_limit = 10 * (m + N)
    Binv, xB = _factor(A, b, basis)
    if xB.min(initial=0.0) < -1e-7 * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise LPError("starting basis is not primal feasible")
    xB = np.maximum(xB, 0.0)
    in_basis = np.zeros(N, dtype=bool)
    in_basis[basis] = True
    since_refactor = 0
    degenerate = 0
    bland = False
    it = 0
    purges = 0
    while True:
        y = c[basis] @ Binv
        d = c - y @ A
        d[in_basis] = 0.0
        # rounding in the duals grows with the largest basic cost
        tol = max(OPT_TOL, 1e-15 * m * float(np.abs(c[basis]).max(initial=0.0)))
        candidates = np.flatnonzero(d < -tol)
        if candidates.size == 0:
            if since_refactor:
                # confirm optimality on a fresh factorization
                Binv, xB = _factor(A, b, basis)
                xB = np.maximum(xB, 0.0)
                since_refactor = 0
                continue
            if artificial is not None and purges < 3 and _purge(A, Binv, xB, basis, in_basis, artificial):
                purges += 1
                Binv, xB = _factor(A, b, basis)
                xB = np.maximum(xB, 0.0)
                continue
            break
        if it >= max_iter:
            raise LPError(f"simplex hit the iteration cap ({max_iter})")
        e = int(candidates[0]) if bland else int(candidates[np.argmin(d[candidates])])
        u = Binv @ A[:, e]
        rows = np.flatnonzero(u > PIVOT_TOL)
        if rows.size == 0:
            raise LPError(f"problem is unbounded along column {e}")
        ratios = xB[rows] / u[rows]
        best = ratios.min()
        ties = rows[ratios <= best + FEAS_TOL]
        if bland:
            r = int(min(ties, key=lambda k: basis[k]))
        else:
            r = int(ties[np.argmax(u[ties])])
        step = xB[r] / u[r]
        if step <= FEAS_TOL:
            degenerate += 1
            if degenerate > 50:
                bland = True
            if degenerate > stall_limit:
                raise LPError("simplex stalled on degenerate pivots")
        else:
            degenerate = 0
            bland = False
        xB = xB - step * u
        xB[r] = step
        xB = np.maximum(xB, 0.0)
        pivot_row = Binv[r] / u[r]
        Binv -= np.outer(u, pivot_row)
        Binv[r] = pivot_row
        in_basis[basis[r]] = False
        in_basis[e] = True
        basis[r] = e
        it += 1
        since_refactor += 1
        if since_refactor >= refactor_every:
            Binv, xB = _factor(A, b, basis)
            xB = np.maximum(xB, 0.0)
            since_refactor = 0
    x = np.zeros(N)
    x[basis] = xB
    y = c[basis] @ Binv
    return LPResult(x, y, float(c @ x), basis, it)


def _purge(A, Binv, xB, basis, in_basis, artificial) -> bool:
    """Swap zero-level basic artificials for structural columns (degenerate pivots)."""
    changed = False
    for r, k in enumerate(basis):
        if not artificial[k] or xB[r] > FEAS_TOL:
            continue
        row = Binv[r] @ A
        row[in_basis | artificial] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) <= 1e-7:
            continue
        in_basis[k] = False
        in_basis[j] = True
        basis[r] = j
        Binv[:] = np.linalg.inv(A[:, basis])
        changed = True
    return changed


def _factor(A, b, basis):
    B = A[:, basis]
    try:
        Binv = np.linalg.inv(B)
    except np.linalg.LinAlgError as exc:
        raise LPError("basis matrix is singular") from exc
    return Binv, Binv @ b
