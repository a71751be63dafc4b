"""High-precision evaluation pipeline for near-cancelling determinants.

The fast path computes everything in float64 log space.  Determinant-based
quantities (disjoint-path partition functions, line-ensemble values) lose one
digit per decade of cancellation between the determinant's terms; on grids
with extreme weight ratios the loss can exceed double precision entirely.
When pivot monitoring flags such a case, the affected quantities are
recomputed here with mpmath, escalating the working precision until the
result is resolved.  This module is a refinement/oracle path only, never the
default route: it mirrors the defining formulas directly (plain DP plus small
determinants in mpf arithmetic) and is restricted to small grids.
"""

from __future__ import annotations

from typing import Dict, Sequence

import mpmath as mp

from .grsk import DagVertex, IncrementField, IndexSet
from .lognum import LogNum

__all__ = ["ExactGrid", "evaluate_adaptive", "DPS_LEVELS"]

NEG_INF = float("-inf")

# Precision ladder: each level resolves cancellations up to roughly
# 10^(dps - 12); values still clipped at the last level are structural zeros
# (mathematically singular determinants), not small numbers.
DPS_LEVELS = (60, 240, 720)


class ExactGrid:
    """mpf mirror of a weight grid with the full evaluation pipeline.

    Weights are exp(logw) taken exactly at their float64 log values, so the
    exact pipeline answers questions about the *same* grid the fast path saw.
    ``clip_events`` counts determinants whose value fell below the resolvable
    range at this precision; callers escalate while it is nonzero.
    """

    def __init__(self, logw, dps: int = DPS_LEVELS[0], max_cells: int = 100):
        self.m, self.n = logw.shape
        if self.m * self.n > max_cells:
            raise ValueError(f"exact pipeline restricted to <= {max_cells} cells")
        self.dps = dps
        self.clip_events = 0
        with mp.workdps(dps):
            self.w = {
                (i, j): mp.e ** mp.mpf(float(logw[i - 1, j - 1]))
                for i in range(1, self.m + 1)
                for j in range(1, self.n + 1)
            }
        self._t1_fields: Dict[tuple, dict] = {}
        self._ens: Dict[tuple, "mp.mpf"] = {}
        self._incs: Dict[int, tuple] = {}
        self._s1_tables: Dict[tuple, dict] = {}

    # -- determinants ---------------------------------------------------------

    def _det_raw(self, rows) -> "mp.mpf":
        k = len(rows)
        a = [list(r) for r in rows]
        det = mp.mpf(1)
        for c in range(k):
            p = max(range(c, k), key=lambda r: abs(a[r][c]))
            if a[p][c] == 0:
                return mp.mpf(0)
            if p != c:
                a[c], a[p] = a[p], a[c]
                det = -det
            det *= a[c][c]
            inv = 1 / a[c][c]
            for r in range(c + 1, k):
                f = a[r][c] * inv
                if f != 0:
                    for q in range(c, k):
                        a[r][q] -= f * a[c][q]
        return det

    def _det_clipped(self, rows) -> "mp.mpf":
        """Determinant with unresolved cancellations clipped to zero (and
        counted); exact zeros do not count as clips."""
        scale = mp.mpf(1)
        for row in rows:
            rmax = max(abs(x) for x in row)
            if rmax == 0:
                return mp.mpf(0)
            scale *= rmax
        d = self._det_raw(rows)
        if d == 0:
            return d
        if abs(d) < scale * mp.mpf(10) ** (-(self.dps - 12)):
            self.clip_events += 1
            return mp.mpf(0)
        return d

    def _to_lognum(self, x: "mp.mpf") -> LogNum:
        if x == 0:
            return LogNum.zero()
        with mp.workdps(self.dps):
            return LogNum(1 if x > 0 else -1, float(mp.log(abs(x))))

    # -- single-path fields -----------------------------------------------------

    def t1_field(self, u: tuple) -> dict:
        if u in self._t1_fields:
            return self._t1_fields[u]
        ui, uj = u
        field: dict = {}
        with mp.workdps(self.dps):
            for i in range(ui, self.m + 1):
                for j in range(uj, self.n + 1):
                    if (i, j) == (ui, uj):
                        field[(i, j)] = self.w[(i, j)]
                        continue
                    acc = field.get((i - 1, j), 0) + field.get((i, j - 1), 0)
                    field[(i, j)] = self.w[(i, j)] * acc
        self._t1_fields[u] = field
        return field

    def t1(self, u: tuple, v: tuple):
        return self.t1_field(u).get(v, mp.mpf(0))

    def _t_rows(self, starts, ends):
        rows = []
        for u in starts:
            f = self.t1_field(u)
            rows.append([f.get(v, mp.mpf(0)) if v[1] >= 1 else mp.mpf(0) for v in ends])
        return rows

    def t_disjoint(self, starts: Sequence[tuple], ends: Sequence[tuple]) -> LogNum:
        with mp.workdps(self.dps):
            return self._to_lognum(self._det_clipped(self._t_rows(starts, ends)))

    def t_nested_corner(self, k: int) -> "mp.mpf":
        """T_k((1,1),(m,n)) as an mpf; positive whenever k <= min(m,n)."""
        if k == 0:
            return mp.mpf(1)
        starts = [(p, 1) for p in range(1, k + 1)]
        ends = [(self.m - k + q, self.n) for q in range(1, k + 1)]
        with mp.workdps(self.dps):
            return self._det_raw(self._t_rows(starts, ends))

    # -- ensemble -----------------------------------------------------------------

    def ensemble(self) -> Dict[tuple, "mp.mpf"]:
        """z_j(i) over J[m,n] as positive mpf values."""
        if self._ens:
            return self._ens
        m, n = self.m, self.n
        idx = IndexSet(m, n)
        z: Dict[tuple, "mp.mpf"] = {}
        with mp.workdps(self.dps):
            for i in range(1, m + 1):
                prev = mp.mpf(1)
                for j in range(1, min(i, n) + 1):
                    starts = [(p, 1) for p in range(1, j + 1)]
                    ends = [(i - j + q, n) for q in range(1, j + 1)]
                    tj = self._det_raw(self._t_rows(starts, ends))
                    z[(i, j)] = tj / prev
                    prev = tj
            for i in range(m + 1, m + n + 1):
                b = i - m
                if i == m + 1:
                    for j in range(1, min(m, n) + 1):
                        z[(i, j)] = z[(m, j)]
                    continue
                prev = mp.mpf(1)
                for j in range(1, min(m + n + 1 - i, m) + 1):
                    starts = [(p, b) for p in range(1, j + 1)]
                    ends = [(m - j + q, n) for q in range(1, j + 1)]
                    tj = self._det_raw(self._t_rows(starts, ends))
                    z[(i, j)] = tj / prev
                    prev = tj
        assert set(z) == set(idx.members())
        self._ens = z
        return z

    def sub_ensemble_values(self, w: int) -> Dict[tuple, "mp.mpf"]:
        """{z_{j+w}(i+w)} on J[m-w, n-w]."""
        z = self.ensemble()
        sub = IndexSet(self.m - w, self.n - w)
        return {(i, j): z[(i + w, j + w)] for (i, j) in sub.members()}

    # -- increments and S -----------------------------------------------------------

    def increments(self, w: int = 0):
        """(IncrementField-shaped adjacency, mpf Y values) for the ensemble
        with the top w lines stripped."""
        if w in self._incs:
            return self._incs[w]
        m, n = self.m - w, self.n - w
        z = self.sub_ensemble_values(w) if w else self.ensemble()
        idx = IndexSet(m, n)
        shape = IncrementField(m, n, {})
        y: Dict[DagVertex, "mp.mpf"] = {}
        with mp.workdps(self.dps):
            one = mp.mpf(1)
            for i in range(1, m + 1):
                for j in range(max(n + 1 - i, 1), n + 1):
                    ell = n + 1 - j
                    den = z[(i - 1, ell)] if idx.contains(i - 1, ell) else one
                    y[DagVertex("L", i, j)] = z[(i, ell)] / den
            for i in range(m + 1, m + n + 1):
                lo = max(i - m, n + 1 - m, 1)
                for j in range(lo, n + 1):
                    ell = n + 1 - j
                    den = z[(i + 1, ell)] if idx.contains(i + 1, ell) else one
                    y[DagVertex("R", i, j)] = z[(i, ell)] / den
            for j in range(max(n + 1 - m, 1), n + 1):
                ell = n + 1 - j
                y[DagVertex("X", m, j)] = one / z[(m, ell)]
        self._incs[w] = (shape, y)
        return self._incs[w]

    def s1_table(self, start: DagVertex, w: int = 0) -> dict:
        key = (start, w)
        if key in self._s1_tables:
            return self._s1_tables[key]
        shape, y = self.increments(w)
        reach: dict = {}
        with mp.workdps(self.dps):
            for v in shape.topo_order():
                acc = mp.mpf(1) if v == start else mp.mpf(0)
                for u in shape.in_neighbors(v):
                    acc += reach.get(u, 0)
                if acc != 0:
                    reach[v] = y[v] * acc
        self._s1_tables[key] = reach
        return reach

    def s_partition(self, starts, ends, w: int = 0) -> LogNum:
        with mp.workdps(self.dps):
            if len(starts) == 1:
                return self._to_lognum(self.s1_table(starts[0], w).get(ends[0], mp.mpf(0)))
            rows = []
            for u in starts:
                tab = self.s1_table(u, w)
                rows.append([tab.get(v, mp.mpf(0)) for v in ends])
            return self._to_lognum(self._det_clipped(rows))

    # -- composite identities ----------------------------------------------------------

    def cross_line_sum(self, a: int, b: int, j0: int) -> LogNum:
        """Sum over crossing lines k = j0..min(a, n-b+1) of
        T([(1,1)^{k-1},(a,1)],[(m,n)^k]) T([(1,1)^k],[(m,n)^{k-1},(m,b)])
        / (T_k T_{k-1})."""
        m, n = self.m, self.n
        kmax = min(a, n - b + 1)
        with mp.workdps(self.dps):
            total = mp.mpf(0)
            for k in range(j0, kmax + 1):
                s1_ = [(p, 1) for p in range(1, k)] + [(a, 1)]
                e1 = [(m, n - q) for q in range(k)]
                s2 = [(p, 1) for p in range(1, k + 1)]
                e2 = [(m, n - q) for q in range(k - 1)] + [(m, b)]
                ta = self._det_clipped(self._t_rows(s1_, e1))
                tb = self._det_clipped(self._t_rows(s2, e2))
                total += ta * tb / (self.t_nested_corner(k) * self.t_nested_corner(k - 1))
            return self._to_lognum(total)

    def padded_ratio(self, w: int, a_cols: Sequence[int], l_rows: Sequence[int]) -> LogNum:
        """T([(1,1)^w, (a,1)...],[(m,n)^w, (m,l)...]) / T_w((1,1),(m,n))."""
        m, n = self.m, self.n
        starts = [(p, 1) for p in range(1, w + 1)] + [(a, 1) for a in a_cols]
        ends = [(m, n - q) for q in range(w)] + [(m, l) for l in l_rows]
        with mp.workdps(self.dps):
            num = self._det_clipped(self._t_rows(starts, ends))
            return self._to_lognum(num / self.t_nested_corner(w))


def evaluate_adaptive(logw, evaluate, levels: Sequence[int] = DPS_LEVELS):
    """Run ``evaluate(ExactGrid) -> result`` on an escalating precision
    ladder, stopping once no determinant was clipped; results still clipped
    at the final level are genuine structural zeros."""
    result = None
    for dps in levels:
        eg = ExactGrid(logw, dps=dps)
        result = evaluate(eg)
        if eg.clip_events == 0:
            return result
    return result
