"""Deterministic verification of the invariance identities on weight grids.

Each checker compares two independently computed sides of an identity in log
space.  The residual metric is the absolute difference of log-magnitudes
(scale free); sign mismatches are unconditional failures; cases where both
sides are canonical zero count as zero agreements.

The float64 fast path monitors determinant pivots.  A case whose determinants
cancelled past the trustworthy range, or whose residual exceeds tolerance, is
re-evaluated through the high-precision pipeline before being believed or
failed: identities are exact in exact arithmetic, so a genuine failure must
survive exact re-evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .environment import DistributionSpec, WeightGrid, explicit_grid, sample_grid, stream
from .exacteval import DPS_LEVELS, ExactGrid
from .grsk import (
    DagVertex,
    IncrementField,
    LineEnsemble,
    build_ensemble_ex,
    build_increments,
    right_vertex,
    s1_table_from,
    up_vertex,
    virtual_sub_ensemble,
)
from .kernels import forward_field, logdet_batch
from .lognum import LogNum, log_sum, signed_log_det
from .partition import BruteForceBudget, EndpointSpec, Point, brute_force_disjoint, t_disjoint_ex

__all__ = [
    "IdentityReport",
    "GridCache",
    "check_lgv",
    "check_extended_invariance",
    "check_cross_line",
    "check_corollary_ratio",
    "check_multipoint_ratio",
    "lgv_suite",
    "extended_invariance_suite",
    "cross_line_suite",
    "corollary_ratio_suite",
    "multipoint_ratio_suite",
    "suite_grids",
]

NEG_INF = float("-inf")

# Escalate a case to the exact pipeline when a determinant's value sits below
# its matrix scale by more than this log-factor (cancellation beyond ~1e5).
ESCALATE_REL = math.log(1e-5)
ESCALATE_PIVOT = 1e-5


@dataclass
class IdentityReport:
    """Outcome of an identity check over one or many cases."""

    name: str
    cases: int = 0
    max_residual: float = 0.0
    zero_agreements: int = 0
    failures: list = field(default_factory=list)
    escalations: int = 0

    def record(self, lhs: LogNum, rhs: LogNum, tol: float, context):
        self.cases += 1
        if lhs.sign == 0 and rhs.sign == 0:
            self.zero_agreements += 1
            return
        if lhs.sign != rhs.sign:
            self.failures.append({"inputs": context, "lhs": repr(lhs), "rhs": repr(rhs)})
            return
        resid = abs(lhs.logmag - rhs.logmag)
        self.max_residual = max(self.max_residual, resid)
        if resid > tol:
            self.failures.append(
                {"inputs": context, "lhs": repr(lhs), "rhs": repr(rhs), "residual": resid}
            )

    def merge(self, other: "IdentityReport"):
        self.cases += other.cases
        self.max_residual = max(self.max_residual, other.max_residual)
        self.zero_agreements += other.zero_agreements
        self.failures.extend(other.failures)
        self.escalations += other.escalations

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cases": self.cases,
            "max_residual": self.max_residual,
            "zero_agreements": self.zero_agreements,
            "failures": self.failures[:20],
            "failure_count": len(self.failures),
            "escalations": self.escalations,
            "passed": self.passed,
        }


class GridCache:
    """Per-grid evaluation tables shared by the checkers.

    Holds single-path fields from every bottom-row start, the corner nested
    partition functions, the line ensemble with its stripped versions, and
    single-path S tables in the joint DAG, plus lazily constructed exact
    mirrors for escalated cases.
    """

    def __init__(self, grid: WeightGrid, max_w: int = 2):
        self.grid = grid
        self.m, self.n = grid.m, grid.n
        self.max_w = min(max_w, self.m - 1, self.n - 1)
        self._fwd: dict = {}
        self._corner: dict = {}
        self._ens: dict = {}
        self._inc: dict = {}
        self._s1: dict = {}
        self._exact: dict = {}
        self.quality = math.inf  # worst rescaled pivot over ensemble dets

    def fwd(self, a: int) -> np.ndarray:
        if a not in self._fwd:
            self._fwd[a] = forward_field(self.grid.logw, a - 1, 0)
        return self._fwd[a]

    def t_corner(self, k: int) -> LogNum:
        """T_k((1,1),(m,n))."""
        if k == 0:
            return LogNum.one()
        if k not in self._corner:
            m, n = self.m, self.n
            rows = [
                [LogNum.from_log(float(self.fwd(p)[m - k + q - 1, n - 1])) for q in range(1, k + 1)]
                for p in range(1, k + 1)
            ]
            res = signed_log_det(rows)
            self.quality = min(self.quality, res.min_pivot)
            self._corner[k] = res.value
        return self._corner[k]

    def ens(self, w: int = 0) -> LineEnsemble:
        if w not in self._ens:
            if w == 0:
                e, q = build_ensemble_ex(self.grid)
                self.quality = min(self.quality, q)
                self._ens[0] = e
            else:
                self._ens[w] = virtual_sub_ensemble(self.ens(w - 1))
        return self._ens[w]

    def inc(self, w: int = 0) -> IncrementField:
        if w not in self._inc:
            self._inc[w] = build_increments(self.ens(w))
        return self._inc[w]

    def s1(self, a: int, w: int = 0) -> dict:
        """S single-path table from (a,1)^up in the w-stripped ensemble."""
        key = (a, w)
        if key not in self._s1:
            m, n = self.m - w, self.n - w
            self._s1[key] = s1_table_from(self.inc(w), up_vertex(m, n, a))
        return self._s1[key]

    # end-table layout: columns 0..m-1 are top ends (b, n); columns m..m+n-2
    # are right ends (m, b) with b = 1..n-1
    def end_count(self) -> int:
        return self.m + self.n - 1

    def t_end_table(self) -> np.ndarray:
        if not hasattr(self, "_t_tab"):
            m, n = self.m, self.n
            tab = np.empty((m, m + n - 1))
            for a in range(1, m + 1):
                f = self.fwd(a)
                tab[a - 1, :m] = f[:, n - 1]
                tab[a - 1, m:] = f[m - 1, : n - 1]
            self._t_tab = tab
        return self._t_tab

    def s_end_table(self) -> np.ndarray:
        if not hasattr(self, "_s_tab"):
            m, n = self.m, self.n
            tab = np.full((m, m + n - 1), NEG_INF)
            for a in range(1, m + 1):
                table = self.s1(a, 0)
                for b in range(1, m + 1):
                    tab[a - 1, b - 1] = table.get(DagVertex("L", b, n), NEG_INF)
                for b in range(1, n):
                    if b >= n + 1 - m:
                        tab[a - 1, m + b - 1] = table.get(right_vertex(m, n, b), NEG_INF)
            self._s_tab = tab
        return self._s_tab

    def exact(self, dps: int) -> ExactGrid:
        if dps not in self._exact:
            self._exact[dps] = ExactGrid(self.grid.logw, dps=dps)
        return self._exact[dps]

    def eval_exact(self, evaluate):
        """Evaluate on the precision ladder, reusing cached exact mirrors.
        Two consecutive clipped levels mean structural zeros, not unresolved
        cancellation, so the ladder stops there."""
        result = None
        clipped_levels = 0
        for dps in DPS_LEVELS:
            eg = self.exact(dps)
            before = eg.clip_events
            result = evaluate(eg)
            if eg.clip_events == before:
                return result
            clipped_levels += 1
            if clipped_levels >= 2:
                return result
        return result


def _end_points(m: int, n: int, end_idx) -> list:
    """Table end indices -> grid points (top (b,n) or right (m,b))."""
    out = []
    for e in end_idx:
        if e < m:
            out.append((e + 1, n))
        else:
            out.append((m, e - m + 1))
    return out


def _end_vertices(m: int, n: int, end_idx) -> list:
    out = []
    for e in end_idx:
        if e < m:
            out.append(DagVertex("L", e + 1, n))
        else:
            out.append(right_vertex(m, n, e - m + 1))
    return out


# -- LGV: determinant vs enumeration -----------------------------------------


def check_lgv(
    grid: WeightGrid,
    spec: EndpointSpec,
    tol: float = 1e-8,
    budget: BruteForceBudget = BruteForceBudget(),
) -> IdentityReport:
    """Disjoint-path determinant against the direct enumeration oracle."""
    report = IdentityReport("lgv")
    det = t_disjoint_ex(grid, spec)
    bf = brute_force_disjoint(grid, spec, budget)
    ctx = {"starts": [tuple(p) for p in spec.starts], "ends": [tuple(p) for p in spec.ends]}
    report.record(det.value, bf, tol, ctx)
    return report


# -- extended invariance -------------------------------------------------------


def _ext_case_exact(cache: GridCache, a_cols, end_idx) -> tuple:
    m, n = cache.m, cache.n
    starts = [(a, 1) for a in a_cols]
    ends = _end_points(m, n, end_idx)
    dag_starts = [up_vertex(m, n, a) for a in a_cols]
    dag_ends = _end_vertices(m, n, end_idx)

    def run(eg: ExactGrid):
        return eg.t_disjoint(starts, ends), eg.s_partition(dag_starts, dag_ends, w=0)

    return cache.eval_exact(run)


def _int_det(rows) -> int:
    """Exact integer determinant (fraction-free Bareiss)."""
    a = [list(r) for r in rows]
    k = len(a)
    sign = 1
    prev = 1
    for c in range(k - 1):
        if a[c][c] == 0:
            for r in range(c + 1, k):
                if a[r][c] != 0:
                    a[c], a[r] = a[r], a[c]
                    sign = -sign
                    break
            else:
                return 0
        for r in range(c + 1, k):
            for q in range(c + 1, k):
                a[r][q] = (a[r][q] * a[c][c] - a[r][c] * a[c][q]) // prev
            a[r][c] = 0
        prev = a[c][c]
    return sign * a[k - 1][k - 1]


def _path_count(m: int, n: int, a: int, end_idx: int) -> int:
    """Number of up-right paths from (a, 1) to an end-table endpoint."""
    if end_idx < m:  # top end (b, n)
        b = end_idx + 1
        return math.comb((b - a) + (n - 1), n - 1) if b >= a else 0
    b = end_idx - m + 1  # right end (m, b)
    return math.comb((m - a) + (b - 1), b - 1)


_FEAS_CACHE: dict = {}


def _feasibility_mask(m: int, n: int, a_combos, end_combos) -> np.ndarray:
    """Whether a vertex-disjoint family exists, per (a-combo, end-combo):
    positivity of the exact integer path-count determinant (the structural
    support depends only on the shape, so this is shared across grids)."""
    key = (m, n, tuple(a_combos), tuple(end_combos))
    if key in _FEAS_CACHE:
        return _FEAS_CACHE[key]
    mask = np.empty((len(a_combos), len(end_combos)), dtype=bool)
    counts = {}
    for ce, ends in enumerate(end_combos):
        for a in {a for combo in a_combos for a in combo}:
            for e in ends:
                if (a, e) not in counts:
                    counts[(a, e)] = _path_count(m, n, a, e)
    for ca, a_cols in enumerate(a_combos):
        for ce, ends in enumerate(end_combos):
            rows = [[counts[(a, e)] for e in ends] for a in a_cols]
            mask[ca, ce] = _int_det(rows) > 0
    _FEAS_CACHE[key] = mask
    return mask


def _ext_eval_batch(
    cache: GridCache, a_combos, end_combos, tol: float, report: IdentityReport
):
    """Batched evaluation of extended-invariance cases: all pairs of an
    a-combination with an end-combination at one (k, l)."""
    if not a_combos or not end_combos:
        return
    m, n = cache.m, cache.n
    A = np.asarray(a_combos)  # (Ca, k) of start columns
    E = np.asarray(end_combos)  # (Ce, k) of end-table indices
    t_tab, s_tab = cache.t_end_table(), cache.s_end_table()
    lmat = t_tab[(A - 1)[:, None, :, None], E[None, :, None, :]]
    rmat = s_tab[(A - 1)[:, None, :, None], E[None, :, None, :]]
    ls, ld = logdet_batch(lmat)
    rs, rd = logdet_batch(rmat)
    with np.errstate(invalid="ignore"):
        resid = np.abs(ld - rd)
    feasible = _feasibility_mask(m, n, tuple(map(tuple, a_combos)), tuple(map(tuple, end_combos)))
    # The two sides are determinants of unrelated matrices with the same true
    # value, so agreement within tolerance is itself evidence of correctness;
    # disagreement (usually cancellation noise) is re-decided at high
    # precision before being believed.
    suspect = feasible & ((ls != 1) | (rs != 1) | (resid > tol))
    for ca in range(A.shape[0]):
        for ce in range(E.shape[0]):
            ctx = {"a": list(map(int, A[ca])), "ends": list(map(int, E[ce]))}
            if not feasible[ca, ce]:
                report.record(LogNum.zero(), LogNum.zero(), tol, ctx)
                continue
            if suspect[ca, ce]:
                report.escalations += 1
                lhs, rhs = _ext_case_exact(cache, tuple(int(x) for x in A[ca]), tuple(int(x) for x in E[ce]))
            else:
                lhs = LogNum.from_log(float(ld[ca, ce]), 1 if ls[ca, ce] > 0 else -1)
                rhs = LogNum.from_log(float(rd[ca, ce]), 1 if rs[ca, ce] > 0 else -1)
            report.record(lhs, rhs, tol, ctx)


def _ext_end_combos(m: int, n: int, k: int, l: int) -> list:
    """End-table index tuples: l top ends (ascending) then k-l right ends
    (descending rows), matching the identity's ordering constraints."""
    right_rows = [b for b in range(1, n) if b >= n + 1 - m]
    combos = []
    for top in combinations(range(1, m + 1), l):
        for right in combinations(right_rows, k - l):
            right_desc = tuple(sorted(right, reverse=True))
            combos.append(tuple(b - 1 for b in top) + tuple(m + b - 1 for b in right_desc))
    return combos


def check_extended_invariance(
    grid: WeightGrid,
    k: int,
    l: int,
    a_list: Sequence[int],
    b_list: Sequence[int],
    tol: float = 1e-8,
    cache: Optional[GridCache] = None,
) -> IdentityReport:
    """T([(a_i,1)], [l top ends, k-l right ends]) against the k-path
    partition function in the joint line-ensemble DAG."""
    m, n = grid.m, grid.n
    if not (0 <= l <= k and len(a_list) == k and len(b_list) == k):
        raise ValueError("need 0 <= l <= k and k-length endpoint lists")
    if list(a_list) != sorted(set(a_list)) or not (1 <= a_list[0] and a_list[-1] <= m):
        raise ValueError(f"a-list must be strictly increasing in 1..{m}")
    top, right = list(b_list[:l]), list(b_list[l:])
    if top != sorted(set(top)) or (top and not (1 <= top[0] and top[-1] <= m)):
        raise ValueError(f"top ends must be strictly increasing in 1..{m}")
    if right != sorted(set(right), reverse=True) or (right and not (1 <= right[-1] and right[0] <= n - 1)):
        raise ValueError(f"right ends must be strictly decreasing in 1..{n - 1}")
    if right and right[-1] < n + 1 - m:
        raise ValueError(f"right ends need b >= {n + 1 - m} on an {m}x{n} grid")
    cache = cache or GridCache(grid)
    report = IdentityReport("extended_invariance")
    end_idx = tuple(b - 1 for b in top) + tuple(m + b - 1 for b in right)
    _ext_eval_batch(cache, [tuple(a_list)], [end_idx], tol, report)
    return report


def extended_invariance_suite(
    grid: WeightGrid, tol: float = 1e-8, kmax: Optional[int] = None
) -> IdentityReport:
    """Exhaustive (a, b, k, l) enumeration of the extended invariance on one
    grid."""
    m, n = grid.m, grid.n
    cache = GridCache(grid)
    report = IdentityReport("extended_invariance")
    kcap = kmax or m
    for k in range(1, kcap + 1):
        a_combos = list(combinations(range(1, m + 1), k))
        for l in range(0, k + 1):
            end_combos = _ext_end_combos(m, n, k, l)
            _ext_eval_batch(cache, a_combos, end_combos, tol, report)
    return report


# -- cross-line line-by-line decomposition ----------------------------------


def _cl_term(cache: GridCache, a: int, b: int, k: int) -> tuple:
    """k-th crossing-line summand of the decomposition and the worst pivot
    among its determinants."""
    m, n = cache.m, cache.n
    rows_a = []
    starts_a = list(range(1, k)) + [a]
    ends_a = [(m, n - q) for q in range(k)]
    for p in starts_a:
        f = cache.fwd(p)
        rows_a.append([LogNum.from_log(float(f[e[0] - 1, e[1] - 1])) for e in ends_a])
    ra = signed_log_det(rows_a)
    rows_b = []
    starts_b = list(range(1, k + 1))
    ends_b = [(m, n - q) for q in range(k - 1)] + [(m, b)]
    for p in starts_b:
        f = cache.fwd(p)
        rows_b.append([LogNum.from_log(float(f[e[0] - 1, e[1] - 1])) for e in ends_b])
    rb = signed_log_det(rows_b)
    term = ra.value * rb.value / (cache.t_corner(k) * cache.t_corner(k - 1))
    return term, min(ra.min_pivot, rb.min_pivot)


def check_cross_line(
    grid: WeightGrid, a: int, b: int, tol: float = 1e-8, cache: Optional[GridCache] = None
) -> IdentityReport:
    """Crossing-line decomposition: the single-path value T_1((a,1),(m,b))
    equals the sum over crossing lines; partial sums from line j reproduce
    the padded ratios (one case per j)."""
    m, n = grid.m, grid.n
    if not (1 <= a <= m and 1 <= b <= n):
        raise ValueError(f"(a,b)=({a},{b}) outside 1..{m} x 1..{n}")
    cache = cache or GridCache(grid)
    report = IdentityReport("cross_line")
    kmax = min(a, n - b + 1)
    terms = []
    worst_pivot = cache.quality
    for k in range(1, kmax + 1):
        term, piv = _cl_term(cache, a, b, k)
        terms.append(term)
        worst_pivot = min(worst_pivot, piv)

    for j in range(1, kmax + 1):
        if j == 1:
            lhs = LogNum.from_log(float(cache.fwd(a)[m - 1, b - 1]))
            piv_l = math.inf
        else:
            rows = []
            starts = list(range(1, j)) + [a]
            ends = [(m, n - q) for q in range(j - 1)] + [(m, b)]
            for p in starts:
                f = cache.fwd(p)
                rows.append([LogNum.from_log(float(f[e[0] - 1, e[1] - 1])) for e in ends])
            res = signed_log_det(rows)
            lhs = res.value / cache.t_corner(j - 1)
            piv_l = res.min_pivot
        rhs = log_sum(terms[j - 1 :])
        resid_bad = lhs.sign == rhs.sign and lhs.sign != 0 and abs(lhs.logmag - rhs.logmag) > tol
        if lhs.sign != rhs.sign or resid_bad:
            report.escalations += 1
            lhs, rhs = cache.eval_exact(
                lambda eg, j=j: (
                    eg.padded_ratio(j - 1, [a], [b]) if j > 1 else eg.t_disjoint([(a, 1)], [(m, b)]),
                    eg.cross_line_sum(a, b, j),
                )
            )
        report.record(lhs, rhs, tol, {"a": a, "b": b, "j": j})
    return report


# -- corollary ratio identities ------------------------------------------------


def check_corollary_ratio(
    grid: WeightGrid, a: int, b: int, tol: float = 1e-8, cache: Optional[GridCache] = None
) -> IdentityReport:
    """j=1: the single-path value equals the ensemble functional F_{a,b};
    j=2: the padded two-path ratio equals F_{a-1,b} of the top-line-stripped
    ensemble."""
    m, n = grid.m, grid.n
    if not (1 <= a <= m and 1 <= b <= n):
        raise ValueError(f"(a,b)=({a},{b}) outside 1..{m} x 1..{n}")
    if b < n + 1 - m:
        raise ValueError(f"F_(a,b) needs b >= {n + 1 - m} on an {m}x{n} grid")
    cache = cache or GridCache(grid)
    report = IdentityReport("corollary_ratio")

    lhs = LogNum.from_log(float(cache.fwd(a)[m - 1, b - 1]))
    rhs = LogNum.from_log(cache.s1(a, 0).get(right_vertex(m, n, b), NEG_INF))
    if lhs.sign != rhs.sign or (
        lhs.sign == rhs.sign == 1 and abs(lhs.logmag - rhs.logmag) > tol
    ):
        report.escalations += 1
        lhs, rhs = cache.eval_exact(
            lambda eg: (
                eg.t_disjoint([(a, 1)], [(m, b)]),
                eg.s_partition([up_vertex(m, n, a)], [right_vertex(m, n, b)], w=0),
            )
        )
    report.record(lhs, rhs, tol, {"a": a, "b": b, "j": 1})

    if a >= 2 and b <= n - 1 and b >= n + 1 - m:
        rows = []
        for p in (1, a):
            f = cache.fwd(p)
            rows.append(
                [LogNum.from_log(float(f[e[0] - 1, e[1] - 1])) for e in [(m, n), (m, b)]]
            )
        res = signed_log_det(rows)
        lhs = res.value / cache.t_corner(1)
        rhs = LogNum.from_log(
            cache.s1(a - 1, 1).get(right_vertex(m - 1, n - 1, b), NEG_INF)
        )
        if lhs.sign != rhs.sign or (
            lhs.sign == rhs.sign == 1 and abs(lhs.logmag - rhs.logmag) > tol
        ):
            report.escalations += 1
            lhs, rhs = cache.eval_exact(
                lambda eg: (
                    eg.padded_ratio(1, [a], [b]),
                    eg.s_partition(
                        [up_vertex(m - 1, n - 1, a - 1)],
                        [right_vertex(m - 1, n - 1, b)],
                        w=1,
                    ),
                )
            )
        report.record(lhs, rhs, tol, {"a": a, "b": b, "j": 2})
    return report


# -- multipoint padded-ratio identity ------------------------------------------


def check_multipoint_ratio(
    grid: WeightGrid,
    w: int,
    a_cols: Sequence[int],
    l_rows: Sequence[int],
    tol: float = 1e-8,
    cache: Optional[GridCache] = None,
) -> IdentityReport:
    """The w-padded ratio T([(1,1)^w,(a,1)],[(m,n)^w,(m,l)]) / T_w equals the
    k-path partition function in the ensemble with the top w lines removed."""
    m, n = grid.m, grid.n
    k = len(a_cols)
    if k != len(l_rows) or k < 1:
        raise ValueError("a_cols and l_rows must be equal-length, nonempty")
    if not (1 <= w < min(m, n)):
        raise ValueError(f"need 1 <= w < min(m,n)={min(m, n)}")
    if list(a_cols) != sorted(set(a_cols)) or a_cols[0] <= w or a_cols[-1] > m:
        raise ValueError(f"a-columns must satisfy {w} < a_1 < ... <= {m}")
    if list(l_rows) != sorted(set(l_rows), reverse=True) or l_rows[0] >= n - w or l_rows[-1] < 0:
        raise ValueError(f"l-rows must satisfy {n - w} > l_1 > ... >= 0")
    cache = cache or GridCache(grid)
    report = IdentityReport("multipoint_ratio")
    ms, ns = m - w, n - w
    ctx = {"w": w, "a": list(a_cols), "l": list(l_rows)}

    if min(l_rows) == 0:
        # an endpoint on row 0: no paths on either side by convention
        report.record(LogNum.zero(), LogNum.zero(), tol, ctx)
        return report
    if min(l_rows) < ns + 1 - ms:
        raise ValueError(
            f"l-rows below {ns + 1 - ms} have no counterpart in the stripped "
            f"ensemble of an {m}x{n} grid"
        )

    starts = list(range(1, w + 1)) + list(a_cols)
    ends = [(m, n - q) for q in range(w)] + [(m, l) for l in l_rows]
    rows = []
    for p in starts:
        f = cache.fwd(p)
        rows.append([LogNum.from_log(float(f[e[0] - 1, e[1] - 1])) for e in ends])
    res = signed_log_det(rows)
    lhs = res.value / cache.t_corner(w)
    rhs = s_partition_in_cache(cache, w, a_cols, l_rows)
    if lhs.sign != rhs.sign or (
        lhs.sign == rhs.sign == 1 and abs(lhs.logmag - rhs.logmag) > tol
    ):
        report.escalations += 1
        lhs, rhs = cache.eval_exact(
            lambda eg: (
                eg.padded_ratio(w, list(a_cols), list(l_rows)),
                eg.s_partition(
                    [up_vertex(ms, ns, a - w) for a in a_cols],
                    [right_vertex(ms, ns, l) for l in l_rows],
                    w=w,
                ),
            )
        )
    report.record(lhs, rhs, tol, ctx)
    return report


def s_partition_in_cache(cache: GridCache, w: int, a_cols, l_rows) -> LogNum:
    ms, ns = cache.m - w, cache.n - w
    if len(a_cols) == 1:
        table = cache.s1(a_cols[0] - w, w)
        return LogNum.from_log(table.get(right_vertex(ms, ns, l_rows[0]), NEG_INF))
    rows = []
    for a in a_cols:
        table = cache.s1(a - w, w)
        rows.append(
            [LogNum.from_log(table.get(right_vertex(ms, ns, l), NEG_INF)) for l in l_rows]
        )
    return signed_log_det(rows).value


# -- suite drivers ---------------------------------------------------------------


def suite_grids(
    count: int,
    shape_cycle: Sequence[tuple],
    seed: int,
    thetas: Sequence[float] = (0.5, 2.0, 8.0),
    include_uniform: bool = True,
    include_adversarial: bool = False,
    adversarial_logrange: float = math.log(1e6),
):
    """Deterministic stream of suite grids cycling shapes and distributions."""
    dists: list = [DistributionSpec.inverse_gamma(t) for t in thetas]
    if include_uniform:
        dists.append(DistributionSpec.uniform01())
    if include_adversarial:
        dists.append("adversarial")
    for r in range(count):
        m, n = shape_cycle[r % len(shape_cycle)]
        d = dists[r % len(dists)]
        if d == "adversarial":
            rng = stream(seed, block=r, purpose=11)
            logw = rng.uniform(-adversarial_logrange, adversarial_logrange, size=(m, n))
            yield explicit_grid(np.exp(logw))
        else:
            yield sample_grid(m, n, d, seed, replica=r)


def lgv_suite(
    n_grids: int = 1000,
    seed: int = 0,
    tol: float = 1e-8,
    shapes: Sequence[tuple] = ((5, 5), (5, 4), (4, 4), (3, 5), (4, 3)),
    kmax: int = 3,
) -> IdentityReport:
    """Determinant vs enumeration over random grids: inverse-gamma weights at
    several shape parameters, uniform weights, and adversarial magnitudes."""
    report = IdentityReport("lgv")
    rng = stream(seed, purpose=12)
    for g in suite_grids(n_grids, shapes, seed, include_adversarial=True):
        m, n = g.m, g.n
        k = int(rng.integers(1, kmax + 1))
        starts = sorted(rng.choice(np.arange(1, m + 1), size=min(k, m), replace=False))
        ends = sorted(rng.choice(np.arange(1, m + 1), size=len(starts), replace=False))
        spec = EndpointSpec(
            [Point(int(x), 1) for x in starts], [Point(int(x), n) for x in ends]
        )
        report.merge(check_lgv(g, spec, tol))
    return report


def cross_line_suite(
    n_grids: int = 500,
    seed: int = 0,
    tol: float = 1e-8,
    shapes: Sequence[tuple] = ((5, 4),),
) -> IdentityReport:
    """All (a, b, j) on each grid."""
    report = IdentityReport("cross_line")
    for g in suite_grids(n_grids, shapes, seed):
        cache = GridCache(g)
        for a in range(1, g.m + 1):
            for b in range(1, g.n + 1):
                report.merge(check_cross_line(g, a, b, tol, cache))
    return report


def corollary_ratio_suite(
    n_grids: int = 500,
    seed: int = 0,
    tol: float = 1e-8,
    shapes: Sequence[tuple] = ((5, 4),),
) -> IdentityReport:
    report = IdentityReport("corollary_ratio")
    for g in suite_grids(n_grids, shapes, seed):
        cache = GridCache(g)
        bmin = max(1, g.n + 1 - g.m)
        for a in range(1, g.m + 1):
            for b in range(bmin, g.n + 1):
                report.merge(check_corollary_ratio(g, a, b, tol, cache))
    return report


def multipoint_ratio_suite(
    n_grids: int = 500,
    seed: int = 0,
    tol: float = 1e-8,
    shapes: Sequence[tuple] = ((5, 4),),
    w_values: Sequence[int] = (1, 2),
) -> IdentityReport:
    """w-padded ratio identity: exhaustive k=1 tuples, all adjacent-pair k=2
    tuples, plus a pigeonhole zero case per grid."""
    report = IdentityReport("multipoint_ratio")
    for g in suite_grids(n_grids, shapes, seed):
        cache = GridCache(g, max_w=max(w_values))
        m, n = g.m, g.n
        for w in w_values:
            if w >= min(m, n):
                continue
            for a in range(w + 1, m + 1):
                for l in range(max(1, n + 1 - m), n - w):
                    report.merge(check_multipoint_ratio(g, w, [a], [l], tol, cache))
            # adjacent-pair two-path cases
            for a in range(w + 1, m):
                for l in range(max(1, n + 1 - m) + 1, n - w):
                    report.merge(
                        check_multipoint_ratio(g, w, [a, a + 1], [l, l - 1], tol, cache)
                    )
            # pigeonhole: more paths than remaining lines -> both sides zero
            kz = min(m, n) - w + 1
            if kz >= 1 and w + kz <= m:
                a_cols = list(range(w + 1, w + kz + 1))
                l_rows = list(range(kz, 0, -1))
                if l_rows[0] < n - w and l_rows[-1] >= max(1, (n - w) + 1 - (m - w)):
                    report.merge(check_multipoint_ratio(g, w, a_cols, l_rows, tol, cache))
    return report
