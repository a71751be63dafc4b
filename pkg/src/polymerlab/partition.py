"""Single- and multi-path polymer partition functions in a weight grid.

The single-path value t1(u, v) sums the product of vertex weights over all
up-right lattice paths from u to v; the k-path value sums over vertex-disjoint
k-tuples.  Disjoint values are evaluated as determinants of single-path values
(valid under the planar ordering of endpoints), with a direct enumeration
oracle for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .environment import WeightGrid
from .kernels import backward_field, forward_field, logsumexp_1d
from .lognum import DetResult, LogNum, signed_log_det

__all__ = [
    "Point",
    "EndpointSpec",
    "PlanarOrderError",
    "BudgetExceededError",
    "t1",
    "t1_log",
    "t_disjoint",
    "t_disjoint_ex",
    "t_k_nested",
    "brute_force_disjoint",
    "BruteForceBudget",
    "enumerate_paths",
]

NEG_INF = float("-inf")


class Point(NamedTuple):
    i: int
    j: int


class PlanarOrderError(ValueError):
    pass


class BudgetExceededError(RuntimeError):
    pass


def _as_point(p) -> Point:
    return p if isinstance(p, Point) else Point(int(p[0]), int(p[1]))


@dataclass(frozen=True)
class EndpointSpec:
    """Starts u_1..u_k and ends v_1..v_k of a k-tuple of disjoint paths.

    Both lists must be weakly southeast-ordered (i nondecreasing, j
    nonincreasing): the standard sufficient condition that any path u_p -> v_q
    crosses any path u_q -> v_p.  Coinciding points are allowed; they simply
    force a zero partition function.
    """

    starts: tuple
    ends: tuple

    def __init__(self, starts: Sequence, ends: Sequence):
        starts = tuple(_as_point(p) for p in starts)
        ends = tuple(_as_point(p) for p in ends)
        if len(starts) != len(ends) or not starts:
            raise ValueError("starts and ends must be equal-length, nonempty lists")
        _require_se_ordered(starts, "starts")
        _require_se_ordered(ends, "ends")
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "ends", ends)

    @property
    def k(self) -> int:
        return len(self.starts)


def _require_se_ordered(pts, label: str):
    for a, b in zip(pts, pts[1:]):
        if not (a.i <= b.i and a.j >= b.j):
            raise PlanarOrderError(
                f"{label} not southeast-ordered: {tuple(a)} then {tuple(b)}"
            )


def _check_inside(grid: WeightGrid, p: Point):
    if not (1 <= p.i <= grid.m and 1 <= p.j <= grid.n):
        raise IndexError(f"point {tuple(p)} outside 1..{grid.m} x 1..{grid.n}")


def t1_log(grid: WeightGrid, u, v) -> float:
    """log t1(u, v); -inf when v is not coordinatewise >= u."""
    u, v = _as_point(u), _as_point(v)
    _check_inside(grid, u)
    _check_inside(grid, v)
    if v.i < u.i or v.j < u.j:
        return NEG_INF
    f = forward_field(grid.logw, u.i - 1, u.j - 1)
    return float(f[v.i - 1, v.j - 1])


def t1(grid: WeightGrid, u, v) -> LogNum:
    """Single-path partition function: sum over up-right paths u -> v of the
    product of vertex weights along the path."""
    return LogNum.from_log(t1_log(grid, u, v))


def _t1_matrix(grid: WeightGrid, spec: EndpointSpec):
    """k x k LogNum matrix of t1(u_p, v_q), sharing one field per distinct
    start."""
    fields = {}
    for p in spec.starts:
        _check_inside(grid, p)
        if p not in fields:
            fields[p] = forward_field(grid.logw, p.i - 1, p.j - 1)
    for q in spec.ends:
        _check_inside(grid, q)
    rows = []
    for p in spec.starts:
        f = fields[p]
        rows.append([LogNum.from_log(float(f[q.i - 1, q.j - 1])) for q in spec.ends])
    return rows


# Below this rescaled-pivot size, cancellation has amplified entry rounding
# beyond the identity-suite tolerances; small grids are re-evaluated at high
# precision instead of trusting the float64 determinant.
REFINE_PIVOT_TOL = 1e-5
REFINE_MAX_CELLS = 100


def t_disjoint_ex(grid: WeightGrid, spec: EndpointSpec, refine: bool = True) -> DetResult:
    """Vertex-disjoint k-path partition function with the degeneracy flag of
    the underlying determinant.

    When the determinant cancels heavily (tiny rescaled pivot) and the grid is
    small, the value is recomputed through the high-precision pipeline; the
    pivot diagnostics of the float64 pass are kept in the result.
    """
    if spec.k == 1:
        return DetResult(t1(grid, spec.starts[0], spec.ends[0]), False)
    det = signed_log_det(_t1_matrix(grid, spec))
    if (
        refine
        and det.min_pivot < REFINE_PIVOT_TOL
        and grid.m * grid.n <= REFINE_MAX_CELLS
    ):
        from .exacteval import evaluate_adaptive

        starts = [tuple(p) for p in spec.starts]
        ends = [tuple(p) for p in spec.ends]
        val = evaluate_adaptive(grid.logw, lambda eg: eg.t_disjoint(starts, ends))
        return DetResult(val, det.degenerate, det.min_pivot)
    return det


def t_disjoint(grid: WeightGrid, spec: EndpointSpec) -> LogNum:
    """Vertex-disjoint k-path partition function, det(t1(u_i, v_j))."""
    return t_disjoint_ex(grid, spec).value


def t_k_nested(grid: WeightGrid, u, v, k: int) -> LogNum:
    """k disjoint paths from u+(p-1,0) to v+(-k+p,0), p = 1..k.  Zero when a
    shifted endpoint leaves the grid (no such path family exists)."""
    u, v = _as_point(u), _as_point(v)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _check_inside(grid, u)
    _check_inside(grid, v)
    starts = [Point(u.i + p, u.j) for p in range(k)]
    ends = [Point(v.i - k + 1 + p, v.j) for p in range(k)]
    for p in starts + ends:
        if not (1 <= p.i <= grid.m and 1 <= p.j <= grid.n):
            return LogNum.zero()
    return t_disjoint(grid, EndpointSpec(starts, ends))


# -- enumeration oracle -----------------------------------------------------


@dataclass(frozen=True)
class BruteForceBudget:
    max_m: int = 6
    max_n: int = 6
    max_k: int = 3
    max_tuples: int = 5_000_000


def enumerate_paths(grid: WeightGrid, u, v):
    """All up-right paths u -> v as (vertex bitmask, log weight) pairs.
    Vertex (i, j) maps to bit (i-1)*n + (j-1); grids must fit in 64 bits."""
    u, v = _as_point(u), _as_point(v)
    _check_inside(grid, u)
    _check_inside(grid, v)
    if grid.m * grid.n > 64:
        raise BudgetExceededError("enumeration oracle limited to grids of <= 64 cells")
    n = grid.n
    lw = grid.logw
    out_masks: list[int] = []
    out_logw: list[float] = []
    if v.i < u.i or v.j < u.j:
        return np.empty(0, dtype=np.uint64), np.empty(0)

    def walk(i: int, j: int, mask: int, acc: float):
        mask |= 1 << ((i - 1) * n + (j - 1))
        acc += lw[i - 1, j - 1]
        if (i, j) == (v.i, v.j):
            out_masks.append(mask)
            out_logw.append(acc)
            return
        if i < v.i:
            walk(i + 1, j, mask, acc)
        if j < v.j:
            walk(i, j + 1, mask, acc)

    walk(u.i, u.j, 0, 0.0)
    return np.array(out_masks, dtype=np.uint64), np.array(out_logw)


def brute_force_disjoint(
    grid: WeightGrid, spec: EndpointSpec, budget: BruteForceBudget = BruteForceBudget()
) -> LogNum:
    """Direct enumeration of all k-tuples of paths, keeping vertex-disjoint
    tuples and summing products of weights in log space."""
    if grid.m > budget.max_m or grid.n > budget.max_n:
        raise BudgetExceededError(
            f"grid {grid.m}x{grid.n} exceeds enumeration budget "
            f"{budget.max_m}x{budget.max_n}"
        )
    if spec.k > budget.max_k:
        raise BudgetExceededError(f"k={spec.k} exceeds enumeration budget k<={budget.max_k}")

    paths = [enumerate_paths(grid, u, v) for u, v in zip(spec.starts, spec.ends)]
    total = 1
    for masks, _ in paths:
        total *= len(masks)
    if total > budget.max_tuples:
        raise BudgetExceededError(f"{total} path tuples exceed budget {budget.max_tuples}")
    if total == 0:
        return LogNum.zero()

    if spec.k == 1:
        return LogNum.from_log(logsumexp_1d(paths[0][1]))

    if spec.k == 2:
        (m1, w1), (m2, w2) = paths
        ok = (m1[:, None] & m2[None, :]) == 0
        w = w1[:, None] + w2[None, :]
        return LogNum.from_log(logsumexp_1d(w[ok]))

    (m1, w1), (m2, w2), (m3, w3) = paths
    ok23 = (m2[:, None] & m3[None, :]) == 0
    w23 = w2[:, None] + w3[None, :]
    partials = []
    for mask, w in zip(m1, w1):
        ok = ((mask & m2) == 0)[:, None] & ((mask & m3) == 0)[None, :] & ok23
        if ok.any():
            partials.append(w + logsumexp_1d(w23[ok]))
    return LogNum.from_log(logsumexp_1d(partials))


def t1_field_to_log(grid: WeightGrid, v) -> np.ndarray:
    """log t1((i,j), v) for every grid cell, as an (m, n) array."""
    v = _as_point(v)
    _check_inside(grid, v)
    return backward_field(grid.logw, v.i - 1, v.j - 1)


def t1_field_from_log(grid: WeightGrid, u) -> np.ndarray:
    """log t1(u, (i,j)) for every grid cell, as an (m, n) array."""
    u = _as_point(u)
    _check_inside(grid, u)
    return forward_field(grid.logw, u.i - 1, u.j - 1)
