"""Batched log-space dynamic-programming kernels.

All heavy numerics run here: anti-diagonal sweeps computing single-path
partition-function fields over (stacks of) weight grids, and batched signed
log-determinants.  Arrays hold log-magnitudes with -inf for exact zeros;
weights are nonnegative so signs only appear in determinants.

Axis convention: a grid array has shape (..., m, n) where axis -2 indexes the
column i = 1..m and axis -1 the row j = 1..n (both 0-based internally).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "logaddexp_fast",
    "corner_field",
    "forward_field",
    "backward_field",
    "logsumexp_1d",
    "logdet_batch",
    "logdet2_signed",
]

NEG_INF = float("-inf")


def logaddexp_fast(a, b, out=None):
    """Elementwise log(e^a + e^b), ~2x faster than np.logaddexp on large
    arrays.  Handles -inf inputs (including both -inf)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if out is None:
        out = np.empty(np.broadcast(a, b).shape)
    with np.errstate(invalid="ignore"):
        tmp = np.subtract(a, b)
        np.abs(tmp, out=tmp)
        np.negative(tmp, out=tmp)
        np.exp(tmp, out=tmp)
        np.log1p(tmp, out=tmp)
        np.maximum(a, b, out=out)
        np.add(out, tmp, out=out)
    # both -inf produces nan via (-inf) - (-inf); the true sum is zero
    np.nan_to_num(out, copy=False, nan=NEG_INF, posinf=np.inf, neginf=NEG_INF)
    return out


def corner_field(logw: np.ndarray) -> np.ndarray:
    """log T_1 from cell (0, 0) to every cell of the grid.

    ``logw`` has shape (..., M, N); leading axes are independent replicas.
    Cell (i, j) of the result is the log of the sum over up-right paths from
    (0, 0) to (i, j) of the product of traversed weights.
    """
    m, n = logw.shape[-2], logw.shape[-1]
    lead = logw.shape[:-2]
    # padded with a -inf border so neighbour gathers never wrap
    g = np.full(lead + (m + 1, n + 1), NEG_INF)
    for d in range(m + n - 1):
        i0 = max(0, d - n + 1)
        i1 = min(d, m - 1)
        ii = np.arange(i0, i1 + 1)
        jj = d - ii
        if d == 0:
            g[..., 1, 1] = logw[..., 0, 0]
            continue
        inflow = logaddexp_fast(g[..., ii, jj + 1], g[..., ii + 1, jj])
        g[..., ii + 1, jj + 1] = logw[..., ii, jj] + inflow
    return g[..., 1:, 1:]


def forward_field(logw: np.ndarray, si: int, sj: int) -> np.ndarray:
    """log T_1 from 0-based start (si, sj) to every cell; -inf where no
    up-right path exists."""
    m, n = logw.shape[-2], logw.shape[-1]
    out = np.full(logw.shape, NEG_INF)
    if not (0 <= si < m and 0 <= sj < n):
        raise IndexError(f"start ({si},{sj}) outside {m}x{n} grid")
    out[..., si:, sj:] = corner_field(logw[..., si:, sj:])
    return out


def backward_field(logw: np.ndarray, ei: int, ej: int) -> np.ndarray:
    """log T_1 from every cell to 0-based end (ei, ej)."""
    m, n = logw.shape[-2], logw.shape[-1]
    out = np.full(logw.shape, NEG_INF)
    if not (0 <= ei < m and 0 <= ej < n):
        raise IndexError(f"end ({ei},{ej}) outside {m}x{n} grid")
    sub = logw[..., : ei + 1, : ej + 1][..., ::-1, ::-1]
    out[..., : ei + 1, : ej + 1] = corner_field(sub)[..., ::-1, ::-1]
    return out


def logsumexp_1d(values) -> float:
    """Scalar log-sum-exp of a 1-d collection, -inf for the empty sum."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return NEG_INF
    mx = v.max()
    if mx == NEG_INF:
        return NEG_INF
    return float(mx + np.log(np.exp(v - mx).sum()))


def logdet_batch(logmag: np.ndarray, sign: np.ndarray | None = None):
    """Signed log-determinants of a stack of small matrices.

    ``logmag``: (..., k, k) log-magnitudes (-inf for zero entries);
    ``sign``: matching array of {-1, 0, +1}, or None when all entries are
    nonnegative.  Returns (sign, logmag) arrays of shape (...,).

    Row maxima are factored out and the rescaled linear matrices go through
    LAPACK's slogdet; this is the batched counterpart of
    ``lognum.signed_log_det`` (which additionally reports degenerate pivots).
    """
    logmag = np.asarray(logmag, dtype=np.float64)
    row_max = logmag.max(axis=-1, keepdims=True)
    finite = np.isfinite(row_max)
    scale = np.where(finite, row_max, 0.0)
    with np.errstate(invalid="ignore"):
        a = np.exp(logmag - scale)
    a = np.nan_to_num(a, nan=0.0)  # -inf - (-inf) on zero rows
    if sign is not None:
        a = a * sign
    s, ld = np.linalg.slogdet(a)
    ld = ld + scale[..., 0].sum(axis=-1)
    zero_row = (~finite[..., 0]).any(axis=-1)
    s = np.where(zero_row, 0.0, s)
    ld = np.where(s == 0.0, NEG_INF, ld)
    return s, ld


def logdet2_signed(l11, l12, l21, l22):
    """Signed 2x2 log-determinant l11*l22 - l12*l21 for nonnegative entries
    given in log domain.  Vectorized; returns (sign, logmag)."""
    main = np.asarray(l11) + np.asarray(l22)
    anti = np.asarray(l12) + np.asarray(l21)
    mx = np.maximum(main, anti)
    with np.errstate(invalid="ignore"):
        diff = np.exp(main - mx) - np.exp(anti - mx)
    diff = np.nan_to_num(diff, nan=0.0)  # both -inf
    sign = np.sign(diff)
    with np.errstate(divide="ignore"):
        logmag = np.where(sign == 0.0, NEG_INF, mx + np.log(np.abs(diff) + (sign == 0.0)))
    return sign, logmag
