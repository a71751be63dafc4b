"""The two-sided line ensemble built from disjoint-path partition functions.

For a grid of shape (m, n) the ensemble carries values z_j(i) on the index
set J[m,n]: the left half J1 tracks partition functions from the fixed corner
(1,1) to (i, n) for growing i, the right half J2 tracks partition functions
from (1, i-m) to the fixed corner (m, n).  Lines j >= 2 are ratios of j- and
(j-1)-disjoint-path partition functions.  The two halves agree at columns m
and m+1 (the gluing constraint).

Multiplicative increments of the ensemble define weights Y on a joint DAG
(up-right on the left half, down-right on the right half, with a forced
crossing through an auxiliary column between them); partition functions S in
that DAG reproduce grid partition functions through the invariance identities
checked in :mod:`polymerlab.identities`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence

import numpy as np

from .environment import WeightGrid
from .kernels import backward_field, forward_field, logdet_batch
from .lognum import LogNum, signed_log_det
from .partition import PlanarOrderError

__all__ = [
    "IndexSet",
    "LineEnsemble",
    "DagVertex",
    "IncrementField",
    "UnsupportedGridError",
    "build_ensemble",
    "ensemble_values_batch",
    "z1_profile_batch",
    "gluing_residuals",
    "build_increments",
    "s_partition",
    "s_partition_bruteforce",
    "s1_table_from",
    "f_function",
    "up_vertex",
    "right_vertex",
    "virtual_sub_ensemble",
]

NEG_INF = float("-inf")

GLUING_TOL = 1e-8


class UnsupportedGridError(ValueError):
    pass


@dataclass(frozen=True)
class IndexSet:
    """J[m,n] = J1 ∪ J2 with
    J1 = {(i,j): 1 <= j <= min(i,n), 1 <= i <= m} and
    J2 = {(i,j): 1 <= j <= min(m+n+1-i, m), m+1 <= i <= m+n}."""

    m: int
    n: int

    def in_j1(self, i: int, j: int) -> bool:
        return 1 <= i <= self.m and 1 <= j <= min(i, self.n)

    def in_j2(self, i: int, j: int) -> bool:
        return self.m + 1 <= i <= self.m + self.n and 1 <= j <= min(self.m + self.n + 1 - i, self.m)

    def contains(self, i: int, j: int) -> bool:
        return self.in_j1(i, j) or self.in_j2(i, j)

    def members(self):
        out = []
        for i in range(1, self.m + 1):
            for j in range(1, min(i, self.n) + 1):
                out.append((i, j))
        for i in range(self.m + 1, self.m + self.n + 1):
            for j in range(1, min(self.m + self.n + 1 - i, self.m) + 1):
                out.append((i, j))
        return out

    def glued_pairs(self):
        return [((self.m, j), (self.m + 1, j)) for j in range(1, min(self.m, self.n) + 1)]

    def free_keys(self):
        """One representative per glued pair: drop column m+1."""
        return [(i, j) for (i, j) in self.members() if i != self.m + 1]


@dataclass(frozen=True)
class LineEnsemble:
    """Values z_j(i) > 0 on J[m,n], glued at columns m, m+1."""

    index: IndexSet
    logz: Dict[tuple, float] = field(repr=False)

    def __post_init__(self):
        members = set(self.index.members())
        if set(self.logz) != members:
            missing = members - set(self.logz)
            extra = set(self.logz) - members
            raise ValueError(f"ensemble keys mismatch: missing {missing}, extra {extra}")
        for (a, b) in self.index.glued_pairs():
            if self.logz[a] != self.logz[b]:
                raise ValueError(f"gluing violated at {a} / {b}")
        for k, v in self.logz.items():
            if math.isnan(v) or v == math.inf:
                raise ValueError(f"bad ensemble value at {k}: {v}")

    @property
    def m(self) -> int:
        return self.index.m

    @property
    def n(self) -> int:
        return self.index.n

    def z(self, i: int, j: int) -> LogNum:
        return LogNum.from_log(self.logz[(i, j)])

    def logz_at(self, i: int, j: int) -> float:
        return self.logz[(i, j)]

    def to_json(self) -> str:
        entries = [
            {"i": i, "j": j, "logz": self.logz[(i, j)]}
            for (i, j) in sorted(self.logz)
        ]
        return json.dumps({"m": self.m, "n": self.n, "entries": entries}, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "LineEnsemble":
        obj = json.loads(text)
        logz = {(e["i"], e["j"]): float(e["logz"]) for e in obj["entries"]}
        return LineEnsemble(IndexSet(obj["m"], obj["n"]), logz)


def _nested_t_log(fields_by_start, ends, j):
    """log T_j as a det of single-path values; fields_by_start[p] indexed by
    0-based (i, j) gives log t1(start_p, .).  Returns (LogNum, min_pivot)."""
    rows = []
    for p in range(j):
        f = fields_by_start[p]
        rows.append([LogNum.from_log(float(f[e[0], e[1]])) for e in ends])
    res = signed_log_det(rows)
    return res.value, res.min_pivot


def build_ensemble(grid: WeightGrid) -> LineEnsemble:
    """Ensemble of the grid; see :func:`build_ensemble_ex`."""
    return build_ensemble_ex(grid)[0]


def build_ensemble_ex(grid: WeightGrid):
    """Ensemble of the grid: z_j(i) = T_j((1,1),(i,n)) / T_{j-1}((1,1),(i,n))
    on J1 and z_j(i) = T_j((1,i-m),(m,n)) / T_{j-1}(...) on J2.

    The two halves are computed through independent dynamic programs (forward
    fields for J1, backward fields for J2); the gluing equality at columns m
    and m+1 is checked and the J1 value stored for both.

    Returns (ensemble, quality), where quality is the smallest rescaled pivot
    over all determinants: values are trustworthy to roughly
    machine-epsilon / quality in relative terms.
    """
    if grid.has_zero:
        raise UnsupportedGridError(
            "line ensembles divide by partition functions; grids with zero "
            "weights (Bernoulli) are not supported"
        )
    m, n = grid.m, grid.n
    idx = IndexSet(m, n)
    kmax = min(m, n)
    fwd = [forward_field(grid.logw, p, 0) for p in range(kmax)]  # start (p+1, 1)
    bwd = [backward_field(grid.logw, x, n - 1) for x in range(m)]  # end (x+1, n)

    quality = math.inf
    logz: Dict[tuple, float] = {}
    # J1: T_j((1,1),(i,n)), ends (i-j+q, n) for q = 1..j
    for i in range(1, m + 1):
        prev = 0.0
        for j in range(1, min(i, n) + 1):
            ends = [(i - j + q - 1, n - 1) for q in range(1, j + 1)]
            tj, piv = _nested_t_log(fwd, ends, j)
            quality = min(quality, piv)
            if tj.sign <= 0:
                raise ArithmeticError(f"nonpositive T_{j}((1,1),({i},{n})) on a positive grid")
            logz[(i, j)] = tj.logmag - prev
            prev = tj.logmag
    # J2: T_j((1,b),(m,n)) with b = i-m, matrix entries t1((p,b),(m-j+q,n))
    glue_resid = 0.0
    for i in range(m + 1, m + n + 1):
        b = i - m
        prev = 0.0
        for j in range(1, min(m + n + 1 - i, m) + 1):
            rows = []
            for p in range(1, j + 1):
                rows.append(
                    [
                        LogNum.from_log(float(bwd[m - j + q - 1][p - 1, b - 1]))
                        for q in range(1, j + 1)
                    ]
                )
            res = signed_log_det(rows)
            tj = res.value
            quality = min(quality, res.min_pivot)
            if tj.sign <= 0:
                raise ArithmeticError(f"nonpositive T_{j}((1,{b}),({m},{n})) on a positive grid")
            val = tj.logmag - prev
            prev = tj.logmag
            if i == m + 1:
                ref = logz[(m, j)]
                glue_resid = max(glue_resid, abs(val - ref))
                val = ref  # store the exact glued value
            logz[(i, j)] = val
    if glue_resid > GLUING_TOL and quality > 1e-6:
        raise ArithmeticError(f"gluing residual {glue_resid:.3e} exceeds {GLUING_TOL}")
    return LineEnsemble(idx, logz), quality


def gluing_residuals(grid: WeightGrid) -> list:
    """|log z_j(m) - log z_j(m+1)| with the two sides computed by the two
    independent dynamic programs; a consistency diagnostic."""
    m, n = grid.m, grid.n
    kmax = min(m, n)
    fwd = [forward_field(grid.logw, p, 0) for p in range(kmax)]
    bwd = [backward_field(grid.logw, x, n - 1) for x in range(m)]
    out = []
    prev1 = prev2 = 0.0
    for j in range(1, kmax + 1):
        ends = [(m - j + q - 1, n - 1) for q in range(1, j + 1)]
        t_left = _nested_t_log(fwd, ends, j)
        rows = [
            [LogNum.from_log(float(bwd[m - j + q - 1][p - 1, 0])) for q in range(1, j + 1)]
            for p in range(1, j + 1)
        ]
        t_right = signed_log_det(rows).value
        z_left = t_left.logmag - prev1
        z_right = t_right.logmag - prev2
        prev1, prev2 = t_left.logmag, t_right.logmag
        out.append(abs(z_left - z_right))
    return out


def ensemble_values_batch(logw: np.ndarray) -> Dict[tuple, np.ndarray]:
    """Ensemble values for a stack of grids: logw (R, m, n) -> {(i,j): (R,)}.

    Same construction as :func:`build_ensemble`, batched; glued keys share
    the J1-route values exactly.
    """
    r, m, n = logw.shape
    idx = IndexSet(m, n)
    kmax = min(m, n)
    fwd = [forward_field(logw, p, 0) for p in range(kmax)]
    bwd = [backward_field(logw, x, n - 1) for x in range(m)]

    out: Dict[tuple, np.ndarray] = {}
    for i in range(1, m + 1):
        prev = np.zeros(r)
        for j in range(1, min(i, n) + 1):
            mat = np.empty((r, j, j))
            for p in range(j):
                for q in range(1, j + 1):
                    mat[:, p, q - 1] = fwd[p][:, i - j + q - 1, n - 1]
            _, ld = logdet_batch(mat)
            out[(i, j)] = ld - prev
            prev = ld
    for i in range(m + 1, m + n + 1):
        b = i - m
        if i == m + 1:
            for j in range(1, min(m, n) + 1):
                out[(i, j)] = out[(m, j)]
            continue
        prev = np.zeros(r)
        for j in range(1, min(m + n + 1 - i, m) + 1):
            mat = np.empty((r, j, j))
            for p in range(j):
                for q in range(1, j + 1):
                    mat[:, p, q - 1] = bwd[m - j + q - 1][:, p, b - 1]
            _, ld = logdet_batch(mat)
            out[(i, j)] = ld - prev
            prev = ld
    assert set(out) == set(idx.members())
    return out


def z1_profile_batch(logw: np.ndarray) -> np.ndarray:
    """Top-line profile Z_1 over positions 1..m+n for a stack of grids:
    (R, m, n) -> (R, m+n).  Positions m and m+1 carry the identical glued
    value."""
    r, m, n = logw.shape
    fwd = forward_field(logw, 0, 0)
    bwd = backward_field(logw, m - 1, n - 1)
    prof = np.empty((r, m + n))
    prof[:, :m] = fwd[:, :, n - 1]
    prof[:, m] = prof[:, m - 1]
    if n > 1:
        prof[:, m + 1 :] = bwd[:, 0, 1:]
    return prof


# -- increments and DAG partition functions ---------------------------------


class DagVertex(NamedTuple):
    """Vertex of the joint line-ensemble DAG.

    part "L": up-right half, columns 1..m; part "R": down-right half, columns
    m+1..m+n; part "X": the auxiliary crossing column, addressed with i = m.
    Row j counts from the bottom; line ell = n+1-j counts from the top.
    """

    part: str
    i: int
    j: int


def up_vertex(m: int, n: int, a: int) -> DagVertex:
    """(a, 1)^up: where the lower boundary of the left half meets column a."""
    if not 1 <= a <= m:
        raise ValueError(f"a={a} outside 1..{m}")
    return DagVertex("L", a, max(n - a + 1, 1))


def right_vertex(m: int, n: int, b: int) -> DagVertex:
    """(m, b)^right = (m+b, b): where row b meets the lower boundary of the
    right half.  Exists only for b >= n+1-m (line n+1-b must exist on the
    right side)."""
    if not 1 <= b <= n:
        raise ValueError(f"b={b} outside 1..{n}")
    if b < n + 1 - m:
        raise ValueError(
            f"(m,{b})-> lies on line {n + 1 - b} which exceeds the {min(m, n)} "
            f"lines of the right half (need b >= {n + 1 - m})"
        )
    return DagVertex("R", m + b, b)


@dataclass(frozen=True)
class IncrementField:
    """Multiplicative increments Y of a line ensemble on the joint DAG."""

    m: int
    n: int
    logy: Dict[DagVertex, float] = field(repr=False)

    def in_v1(self, i: int, j: int) -> bool:
        return 1 <= i <= self.m and max(self.n + 1 - i, 1) <= j <= self.n

    def in_v2(self, i: int, j: int) -> bool:
        lo = max(i - self.m, self.n + 1 - self.m, 1)
        return self.m + 1 <= i <= self.m + self.n and lo <= j <= self.n

    def has_aux(self, j: int) -> bool:
        return max(self.n + 1 - self.m, 1) <= j <= self.n

    def contains(self, v: DagVertex) -> bool:
        if v.part == "L":
            return self.in_v1(v.i, v.j)
        if v.part == "R":
            return self.in_v2(v.i, v.j)
        if v.part == "X":
            return v.i == self.m and self.has_aux(v.j)
        return False

    def in_neighbors(self, v: DagVertex):
        out = []
        if v.part == "L":
            if self.in_v1(v.i - 1, v.j):
                out.append(DagVertex("L", v.i - 1, v.j))
            if self.in_v1(v.i, v.j - 1):
                out.append(DagVertex("L", v.i, v.j - 1))
        elif v.part == "X":
            out.append(DagVertex("L", self.m, v.j))
        elif v.part == "R":
            if v.i == self.m + 1:
                if self.has_aux(v.j):
                    out.append(DagVertex("X", self.m, v.j))
            elif self.in_v2(v.i - 1, v.j):
                out.append(DagVertex("R", v.i - 1, v.j))
            if self.in_v2(v.i, v.j + 1):
                out.append(DagVertex("R", v.i, v.j + 1))
        return out

    def topo_order(self):
        """Vertices in a topological order of the DAG: left columns with
        ascending rows, the auxiliary column, right columns with descending
        rows (their edges point down)."""
        order = []
        for i in range(1, self.m + 1):
            for j in range(max(self.n + 1 - i, 1), self.n + 1):
                order.append(DagVertex("L", i, j))
        for j in range(max(self.n + 1 - self.m, 1), self.n + 1):
            order.append(DagVertex("X", self.m, j))
        for i in range(self.m + 1, self.m + self.n + 1):
            lo = max(i - self.m, self.n + 1 - self.m, 1)
            for j in range(self.n, lo - 1, -1):
                order.append(DagVertex("R", i, j))
        return order


def build_increments(ens: LineEnsemble) -> IncrementField:
    """Y on V1: z_l(i)/z_l(i-1); on V2: z_l(i)/z_l(i+1); on the auxiliary
    column: 1/z_l(m); all with l = n+1-j and the convention that the value
    just outside a line's first vertex is 1."""
    m, n = ens.m, ens.n
    idx = ens.index
    logy: Dict[DagVertex, float] = {}
    for i in range(1, m + 1):
        for j in range(max(n + 1 - i, 1), n + 1):
            ell = n + 1 - j
            num = ens.logz[(i, ell)]
            den = ens.logz[(i - 1, ell)] if idx.contains(i - 1, ell) else 0.0
            logy[DagVertex("L", i, j)] = num - den
    for i in range(m + 1, m + n + 1):
        lo = max(i - m, n + 1 - m, 1)
        for j in range(lo, n + 1):
            ell = n + 1 - j
            num = ens.logz[(i, ell)]
            den = ens.logz[(i + 1, ell)] if idx.contains(i + 1, ell) else 0.0
            logy[DagVertex("R", i, j)] = num - den
    for j in range(max(n + 1 - m, 1), n + 1):
        ell = n + 1 - j
        logy[DagVertex("X", m, j)] = -ens.logz[(m, ell)]
    return IncrementField(m, n, logy)


def s1_table_from(inc: IncrementField, start: DagVertex) -> Dict[DagVertex, float]:
    """log S for single paths from ``start`` to every DAG vertex."""
    if not inc.contains(start):
        raise ValueError(f"unknown DAG vertex {start}")
    reach: Dict[DagVertex, float] = {}
    for v in inc.topo_order():
        acc = 0.0 if v == start else NEG_INF
        for u in inc.in_neighbors(v):
            lu = reach.get(u, NEG_INF)
            if lu > acc:
                acc, lu = lu, acc
            if lu != NEG_INF:
                acc += math.log1p(math.exp(lu - acc))
        if acc != NEG_INF:
            reach[v] = inc.logy[v] + acc
    return reach


def _boundary_positions(inc: IncrementField, vertices, role: str):
    """Positions of start/end vertices along the lower boundary of the joint
    DAG, used validating planar ordering for multi-path S."""
    m, n = inc.m, inc.n
    pos = []
    for v in vertices:
        if v.part == "L" and role == "start" and v.j == max(n + 1 - v.i, 1):
            pos.append(v.i)
        elif v.part == "L" and role == "end" and v.j == n:
            pos.append(v.i)
        elif v.part == "R" and role == "end" and v.i - m == v.j:
            pos.append(m + (n - v.j) + 1)
        else:
            return None
    return pos


def s_partition(inc: IncrementField, starts: Sequence[DagVertex], ends: Sequence[DagVertex]) -> LogNum:
    """k-path partition function in the joint DAG: for k = 1 a dynamic
    program in topological order; for k > 1 the determinant of the
    single-path matrix (LGV on the DAG).  The empty sum is zero."""
    starts = list(starts)
    ends = list(ends)
    if len(starts) != len(ends) or not starts:
        raise ValueError("starts and ends must be equal-length, nonempty")
    for v in starts + ends:
        if not inc.contains(v):
            raise ValueError(f"unknown DAG vertex {v}")
    if len(starts) == 1:
        table = s1_table_from(inc, starts[0])
        return LogNum.from_log(table.get(ends[0], NEG_INF))
    spos = _boundary_positions(inc, starts, "start")
    epos = _boundary_positions(inc, ends, "end")
    if spos is None or epos is None:
        raise PlanarOrderError(
            "multi-path S requires boundary starts (a,1)^up and boundary ends "
            "(top line or (m,b)->)"
        )
    if any(a > b for a, b in zip(spos, spos[1:])) or any(a > b for a, b in zip(epos, epos[1:])):
        raise PlanarOrderError("starts/ends not ordered along the boundary")
    tables = {}
    rows = []
    for u in starts:
        if u not in tables:
            tables[u] = s1_table_from(inc, u)
        rows.append([LogNum.from_log(tables[u].get(v, NEG_INF)) for v in ends])
    return signed_log_det(rows).value


def _dag_paths(inc: IncrementField, u: DagVertex, v: DagVertex, budget: int = 200_000):
    """All DAG paths u -> v as (frozen vertex set, log weight); oracle use."""
    out = []

    def walk(w: DagVertex, seen: tuple, acc: float):
        seen = seen + (w,)
        acc += inc.logy[w]
        if len(out) > budget:
            raise RuntimeError("DAG enumeration budget exceeded")
        if w == v:
            out.append((frozenset(seen), acc))
            return
        for nxt in _out_neighbors(inc, w):
            walk(nxt, seen, acc)

    walk(u, (), 0.0)
    return out


def _out_neighbors(inc: IncrementField, v: DagVertex):
    out = []
    if v.part == "L":
        if inc.in_v1(v.i + 1, v.j):
            out.append(DagVertex("L", v.i + 1, v.j))
        if inc.in_v1(v.i, v.j + 1):
            out.append(DagVertex("L", v.i, v.j + 1))
        if v.i == inc.m and inc.has_aux(v.j):
            out.append(DagVertex("X", inc.m, v.j))
    elif v.part == "X":
        out.append(DagVertex("R", inc.m + 1, v.j))
    elif v.part == "R":
        if inc.in_v2(v.i + 1, v.j):
            out.append(DagVertex("R", v.i + 1, v.j))
        if inc.in_v2(v.i, v.j - 1):
            out.append(DagVertex("R", v.i, v.j - 1))
    return out


def s_partition_bruteforce(
    inc: IncrementField, starts: Sequence[DagVertex], ends: Sequence[DagVertex]
) -> LogNum:
    """Vertex-disjoint enumeration oracle on the DAG, k <= 2."""
    if len(starts) > 2:
        raise ValueError("DAG enumeration oracle supports k <= 2")
    if len(starts) == 1:
        paths = _dag_paths(inc, starts[0], ends[0])
        return LogNum.from_log(_lse([w for _, w in paths]))
    p1 = _dag_paths(inc, starts[0], ends[0])
    p2 = _dag_paths(inc, starts[1], ends[1])
    terms = [w1 + w2 for s1_, w1 in p1 for s2_, w2 in p2 if not (s1_ & s2_)]
    return LogNum.from_log(_lse(terms))


def _lse(vals):
    if not vals:
        return NEG_INF
    mx = max(vals)
    if mx == NEG_INF:
        return NEG_INF
    return mx + math.log(sum(math.exp(v - mx) for v in vals))


def f_function(ens: LineEnsemble, a: int, b: int, inc: Optional[IncrementField] = None) -> LogNum:
    """Single-path partition function in the joint DAG from (a,1)^up to
    (m,b)->; evaluates the ensemble functional that the invariance identities
    equate with grid partition functions."""
    m, n = ens.m, ens.n
    if not (1 <= a <= m and 1 <= b <= n):
        raise ValueError(f"(a,b)=({a},{b}) outside 1..{m} x 1..{n}")
    start = up_vertex(m, n, a)
    end = right_vertex(m, n, b)
    if inc is None:
        inc = build_increments(ens)
    return s_partition(inc, [start], [end])


def virtual_sub_ensemble(ens: LineEnsemble) -> LineEnsemble:
    """The (m-1, n-1) ensemble {z_{j+1}(i+1)} obtained by removing the top
    line and shifting indices."""
    m, n = ens.m, ens.n
    if m < 2 or n < 2:
        raise ValueError(f"sub-ensemble requires m, n >= 2, got {m}x{n}")
    sub = IndexSet(m - 1, n - 1)
    logz = {(i, j): ens.logz[(i + 1, j + 1)] for (i, j) in sub.members()}
    return LineEnsemble(sub, logz)
