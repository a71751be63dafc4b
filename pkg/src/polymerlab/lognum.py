"""Signed log-domain arithmetic.

Partition functions of polymers over even modest lattices overflow double
precision (products of hundreds of weights), so every scalar value in this
package is carried as a sign together with the log of its magnitude.  The
canonical zero is (sign=0, logmag=-inf); it represents empty path sums and is
an ordinary value, not an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

__all__ = [
    "LogNum",
    "log_add",
    "log_sum",
    "signed_log_det",
    "DetResult",
    "DEGENERATE_PIVOT_TOL",
]

NEG_INF = float("-inf")

# Relative pivot threshold below which a determinant is flagged as having lost
# all significant digits.  Near-cancellation is meaningful here (disjoint-path
# partition functions can be tiny but positive), so this is a flag, not an error.
DEGENERATE_PIVOT_TOL = 1e-13


@dataclass(frozen=True)
class LogNum:
    """A real number stored as (sign, log |x|).

    Invariant: sign == 0 iff logmag == -inf (canonical zero).
    """

    sign: int
    logmag: float

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign}")
        if math.isnan(self.logmag):
            raise ValueError("logmag is NaN")
        if self.sign == 0 and self.logmag != NEG_INF:
            raise ValueError("canonical zero requires logmag = -inf")
        if self.logmag == NEG_INF and self.sign != 0:
            # normalize: magnitude zero forces sign zero
            object.__setattr__(self, "sign", 0)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero() -> "LogNum":
        return LogNum(0, NEG_INF)

    @staticmethod
    def one() -> "LogNum":
        return LogNum(1, 0.0)

    @staticmethod
    def from_float(x: float) -> "LogNum":
        if x == 0.0:
            return LogNum.zero()
        return LogNum(1 if x > 0 else -1, math.log(abs(x)))

    @staticmethod
    def from_log(logmag: float, sign: int = 1) -> "LogNum":
        if logmag == NEG_INF:
            return LogNum.zero()
        return LogNum(sign, logmag)

    # -- queries -----------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    def to_float(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.logmag)

    def isclose(self, other: "LogNum", tol: float = 1e-10) -> bool:
        """Sign equality plus closeness of log-magnitudes (scale free)."""
        if self.sign != other.sign:
            return False
        if self.sign == 0:
            return True
        return abs(self.logmag - other.logmag) <= tol

    # -- arithmetic --------------------------------------------------------

    def __mul__(self, other: "LogNum") -> "LogNum":
        s = self.sign * other.sign
        if s == 0:
            return LogNum.zero()
        return LogNum(s, self.logmag + other.logmag)

    def __truediv__(self, other: "LogNum") -> "LogNum":
        if other.sign == 0:
            raise ZeroDivisionError("division by canonical zero")
        if self.sign == 0:
            return LogNum.zero()
        return LogNum(self.sign * other.sign, self.logmag - other.logmag)

    def __neg__(self) -> "LogNum":
        if self.sign == 0:
            return self
        return LogNum(-self.sign, self.logmag)

    def __add__(self, other: "LogNum") -> "LogNum":
        return log_add(self, other)

    def __sub__(self, other: "LogNum") -> "LogNum":
        return log_add(self, -other)

    def __repr__(self) -> str:  # compact, sign as character
        c = {1: "+", 0: "0", -1: "-"}[self.sign]
        return f"LogNum({c}, {self.logmag:.12g})"


def log_add(a: LogNum, b: LogNum) -> LogNum:
    """Signed log-domain sum, max-factored so the larger magnitude anchors
    the exponent.  Exact cancellation returns the canonical zero."""
    if a.sign == 0:
        return b
    if b.sign == 0:
        return a
    # order so |a| >= |b|
    if b.logmag > a.logmag:
        a, b = b, a
    d = b.logmag - a.logmag  # <= 0
    if a.sign == b.sign:
        return LogNum(a.sign, a.logmag + math.log1p(math.exp(d)))
    # opposite signs
    if d == 0.0:
        return LogNum.zero()
    # 1 - e^d in (0, 1); use expm1 for accuracy near cancellation
    return LogNum(a.sign, a.logmag + math.log1p(-math.exp(d)))


def log_sum(values: Iterable[LogNum]) -> LogNum:
    acc = LogNum.zero()
    for v in values:
        acc = log_add(acc, v)
    return acc


class DetResult(NamedTuple):
    value: LogNum
    degenerate: bool
    # smallest rescaled pivot seen during elimination; 1/min_pivot estimates
    # the cancellation amplification of entry-level rounding error
    min_pivot: float = math.inf


def signed_log_det(matrix, pivot_tol: float = DEGENERATE_PIVOT_TOL) -> DetResult:
    """Sign and log-magnitude of det(M) for a square matrix of LogNum.

    The per-row maximum magnitude is factored out, elimination with partial
    pivoting runs on the rescaled linear-domain matrix (entries in [-1, 1]),
    and the factored logs are re-added at the end.  When a pivot magnitude
    falls below ``pivot_tol`` (relative to the unit row scale) the result is
    flagged degenerate: all significant digits may have cancelled.
    """
    n = len(matrix)
    if n < 1 or any(len(row) != n for row in matrix):
        raise ValueError("matrix must be square and non-empty")

    row_logs = []
    a = []
    for row in matrix:
        mx = max(e.logmag for e in row)
        if mx == NEG_INF:  # a row of exact zeros
            return DetResult(LogNum.zero(), False, 0.0)
        row_logs.append(mx)
        a.append([e.sign * math.exp(e.logmag - mx) for e in row])

    sign = 1
    log_pivots = 0.0
    degenerate = False
    min_pivot = math.inf
    for k in range(n):
        p = max(range(k, n), key=lambda r: abs(a[r][k]))
        piv = a[p][k]
        min_pivot = min(min_pivot, abs(piv))
        if abs(piv) < pivot_tol:
            degenerate = True
        if piv == 0.0:
            return DetResult(LogNum.zero(), degenerate, 0.0)
        if p != k:
            a[k], a[p] = a[p], a[k]
            sign = -sign
        if piv < 0:
            sign = -sign
        log_pivots += math.log(abs(piv))
        for r in range(k + 1, n):
            f = a[r][k] / piv
            if f != 0.0:
                for c in range(k, n):
                    a[r][c] -= f * a[k][c]

    return DetResult(LogNum(sign, log_pivots + sum(row_logs)), degenerate, min_pivot)
