"""Prelimit rescaled partition-function fields and convergence diagnostics.

At scaling parameter n the weight law is inverse-gamma with shape 2 sqrt(n),
and the single-path partition function between lattice points spaced
diffusively (2 sqrt(n) per unit of the spatial variable, n per unit of time)
is multiplied by the deterministic factor sqrt(n) ((2 sqrt(n) - 1)/2)^steps.
As n grows these fields approach the multiplicative-noise continuum objects;
the diagnostics here track distributional convergence (Kolmogorov-Smirnov
distances between consecutive levels) and run the finite-n inequality
experiment at diffusive endpoint separations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .bk import BkVerdict, IncreasingEvent, bk_endpoint_variation, rhs_quantile_threshold
from .environment import DistributionSpec, Purpose, iter_blocks, sample_logw_block
from .kernels import forward_field, logdet2_signed

__all__ = [
    "RescaledFieldSpec",
    "BudgetError",
    "sample_z_n",
    "sample_k2_n",
    "K2Samples",
    "ConvergenceReport",
    "convergence_diagnostic",
    "prelimit_bk_surrogate",
    "log_scale_factor",
]

NEG_INF = float("-inf")

MAX_TIME_SPAN = 512  # cap on n * (t - s)
MAX_CELLS = 1 << 20  # cap on lattice cells per replica grid


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class RescaledFieldSpec:
    """Evaluation request for the rescaled field: query tuples (x, s, y, t)
    with s < t, a replica count, and a seed.  The weight shape parameter is
    forced to 2 sqrt(n)."""

    n: int
    region: tuple
    replicas: int
    seed: int

    def __init__(self, n: int, region: Sequence, replicas: int, seed: int):
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "region", tuple(tuple(float(c) for c in q) for q in region))
        object.__setattr__(self, "replicas", int(replicas))
        object.__setattr__(self, "seed", int(seed))
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.region:
            raise ValueError("region must contain at least one query tuple")
        for (x, s, y, t) in self.region:
            if not s < t:
                raise ValueError(f"need s < t, got ({x},{s},{y},{t})")
            if self.n * (t - s) > MAX_TIME_SPAN:
                raise BudgetError(
                    f"n (t - s) = {self.n * (t - s):g} exceeds budget {MAX_TIME_SPAN}"
                )

    @property
    def theta(self) -> float:
        return 2.0 * math.sqrt(self.n)


def log_scale_factor(n: int, steps: int) -> float:
    """log of sqrt(n) ((2 sqrt(n) - 1)/2)^steps."""
    return 0.5 * math.log(n) + steps * math.log((2.0 * math.sqrt(n) - 1.0) / 2.0)


def _lattice_cols(n: int, x: float, s: float):
    """Lattice column n s + 2 sqrt(n) x as (floor corner, frac); the row n s
    must be an integer."""
    row = n * s
    if abs(row - round(row)) > 1e-9:
        raise ValueError(f"n s = {row} is not an integer; align s to multiples of 1/n")
    col = n * s + 2.0 * math.sqrt(n) * x
    lo = math.floor(col + 1e-12)
    frac = col - lo
    if frac < 1e-9:
        frac = 0.0
    return int(round(row)), lo, frac


def _corners(lo: int, frac: float):
    if frac == 0.0:
        return ((lo, 1.0),)
    return ((lo, 1.0 - frac), (lo + 1, frac))


def _bounding_box(n: int, region) -> tuple:
    rows, cols = [], []
    for (x, s, y, t) in region:
        rs, clo, cf = _lattice_cols(n, x, s)
        rt, dlo, df = _lattice_cols(n, y, t)
        rows += [rs, rt]
        cols += [clo, clo + (1 if cf else 0), dlo, dlo + (1 if df else 0)]
    r0, r1 = min(rows), max(rows)
    c0, c1 = min(cols), max(cols)
    cells = (c1 - c0 + 1) * (r1 - r0 + 1)
    if cells > MAX_CELLS:
        raise BudgetError(f"{cells} lattice cells exceed budget {MAX_CELLS}")
    if cells < 1:
        raise ValueError("empty lattice region")
    return r0, r1, c0, c1


def _eval_zn_points(logw: np.ndarray, n: int, region, box) -> np.ndarray:
    """log Z^n at each query point for each replica grid; grids are indexed
    (replica, column - c0, row - r0).  Off-lattice spatial arguments are
    bilinearly interpolated between the integer-argument field values."""
    r0, _, c0, _ = box
    out = np.empty((logw.shape[0], len(region)))
    fields = {}
    for pt, (x, s, y, t) in enumerate(region):
        rs, clo, cf = _lattice_cols(n, x, s)
        rt, dlo, df = _lattice_cols(n, y, t)
        pieces = []
        for cu, wu in _corners(clo, cf):
            key = (cu, rs)
            if key not in fields:
                fields[key] = forward_field(logw, cu - c0, rs - r0)
            f = fields[key]
            for cv, wv in _corners(dlo, df):
                if cv < cu:
                    continue
                steps = (cv - cu) + (rt - rs)
                vals = f[:, cv - c0, rt - r0] + log_scale_factor(n, steps)
                pieces.append(math.log(wu * wv) + vals)
        stackv = np.stack(pieces, axis=-1)
        mx = stackv.max(axis=-1)
        with np.errstate(invalid="ignore"):
            out[:, pt] = mx + np.log(np.exp(stackv - mx[:, None]).sum(axis=-1))
        np.nan_to_num(out[:, pt], copy=False, nan=NEG_INF, neginf=NEG_INF)
    return out


def sample_z_n(spec: RescaledFieldSpec, purpose: int = Purpose.REPLICA) -> np.ndarray:
    """Replica samples of log Z^n at each query point, shape
    (replicas, len(region)); all points of one replica share one weight
    field."""
    box = _bounding_box(spec.n, spec.region)
    r0, r1, c0, c1 = box
    m_cols, n_rows = c1 - c0 + 1, r1 - r0 + 1
    dist = DistributionSpec.inverse_gamma(spec.theta)
    sub = max(1, 2_000_000 // (m_cols * n_rows))
    out = np.empty((spec.replicas, len(spec.region)))
    pos = 0
    for block, count in iter_blocks(spec.replicas):
        logw = sample_logw_block(m_cols, n_rows, dist, spec.seed, block, count, purpose)
        for lo in range(0, count, sub):
            sl = logw[lo : lo + sub]
            out[pos : pos + len(sl)] = _eval_zn_points(sl, spec.n, spec.region, box)
            pos += len(sl)
    return out


@dataclass
class K2Samples:
    logvals: np.ndarray  # -inf where the two-path value is zero
    degenerate_fraction: float  # corners whose determinant lost all digits


def sample_k2_n(
    spec: RescaledFieldSpec,
    x1: float,
    x2: float,
    y1: float,
    y2: float,
    s: float,
    t: float,
    purpose: int = Purpose.REPLICA,
) -> K2Samples:
    """Replica samples of log K^n_2: the two-path partition function between
    diffusively rescaled endpoints (the second ending one lattice row below
    the first), with the deterministic factor
    n ((2 sqrt(n) - 1)/2)^(4 n (t-s) - 1 + 2 sqrt(n) (y1+y2-x1-x2))."""
    if not (x1 <= x2 and y1 <= y2 and s < t):
        raise ValueError("need x1 <= x2, y1 <= y2, s < t")
    n = spec.n
    if n * (t - s) > MAX_TIME_SPAN:
        raise BudgetError(f"n (t - s) = {n * (t - s):g} exceeds budget {MAX_TIME_SPAN}")
    rs, a1, a1f = _lattice_cols(n, x1, s)
    _, a2, a2f = _lattice_cols(n, x2, s)
    rt, b1, b1f = _lattice_cols(n, y1, t)
    _, b2, b2f = _lattice_cols(n, y2, t)
    if rt - 1 < rs:
        raise ValueError("need t >= s + 1/n for the lowered second endpoint")
    cols = [a1, a1 + (1 if a1f else 0), a2, a2 + (1 if a2f else 0),
            b1, b1 + (1 if b1f else 0), b2, b2 + (1 if b2f else 0)]
    c0, c1 = min(cols), max(cols)
    cells = (c1 - c0 + 1) * (rt - rs + 1)
    if cells > MAX_CELLS:
        raise BudgetError(f"{cells} lattice cells exceed budget {MAX_CELLS}")
    dist = DistributionSpec.inverse_gamma(spec.theta)
    sub = max(1, 2_000_000 // cells)
    out = np.empty(spec.replicas)
    degen = 0
    total_corners = 0
    pos = 0
    for block, count in iter_blocks(spec.replicas):
        logw = sample_logw_block(c1 - c0 + 1, rt - rs + 1, dist, spec.seed, block, count, purpose)
        for lo in range(0, count, sub):
            sl = logw[lo : lo + sub]
            fields = {}
            pieces = []
            for ca, wa in _corners(a1, a1f):
                for cb, wb in _corners(a2, a2f):
                    for cc, wc in _corners(b1, b1f):
                        for cd, wd in _corners(b2, b2f):
                            for cu in (ca, cb):
                                if cu not in fields:
                                    fields[cu] = forward_field(sl, cu - c0, 0)
                            f1, f2 = fields[ca], fields[cb]
                            l11 = f1[:, cc - c0, rt - rs]
                            l12 = f1[:, cd - c0, rt - rs - 1]
                            l21 = f2[:, cc - c0, rt - rs]
                            l22 = f2[:, cd - c0, rt - rs - 1]
                            sign, ld = logdet2_signed(l11, l12, l21, l22)
                            # combined steps of both paths; with the overall
                            # factor n = sqrt(n) * sqrt(n) this matches
                            # n ((2 sqrt(n)-1)/2)^(4n(t-s) - 1 + 2 sqrt(n) dy)
                            steps = (cc - ca) + (rt - rs) + (cd - cb) + (rt - 1 - rs)
                            ld = ld + 0.5 * math.log(n) + log_scale_factor(n, steps)
                            neg = sign < 0
                            degen += int(neg.sum())
                            total_corners += len(sign)
                            vals = np.where(sign > 0, ld, NEG_INF)
                            pieces.append(math.log(wa * wb * wc * wd) + vals)
            stackv = np.stack(pieces, axis=-1)
            mx = stackv.max(axis=-1)
            with np.errstate(invalid="ignore"):
                vals = mx + np.log(np.exp(stackv - mx[:, None]).sum(axis=-1))
            vals = np.nan_to_num(vals, nan=NEG_INF, neginf=NEG_INF)
            out[pos : pos + len(sl)] = vals
            pos += len(sl)
    return K2Samples(out, degen / max(total_corners, 1))


@dataclass
class ConvergenceReport:
    levels: tuple
    point_labels: tuple
    stats: dict  # level -> list over points of summary dicts
    ks: dict  # (level_a, level_b) -> list over points of KS distances
    ks_non_decreasing: list = field(default_factory=list)  # point labels flagged

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "points": [list(p) for p in self.point_labels],
            "stats": {str(k): v for k, v in self.stats.items()},
            "ks": {f"{a}->{b}": v for (a, b), v in self.ks.items()},
            "ks_non_decreasing": self.ks_non_decreasing,
        }


def convergence_diagnostic(specs: Sequence[RescaledFieldSpec]) -> ConvergenceReport:
    """Distributional convergence diagnostic across increasing n: per-point
    summary statistics and Kolmogorov-Smirnov distances between consecutive
    levels.  A non-decreasing KS sequence is flagged, not failed: the
    assertion is soft."""
    if len(specs) < 2:
        raise ValueError("need at least two levels of n")
    ns = [sp.n for sp in specs]
    if sorted(ns) != ns or len(set(ns)) != len(ns):
        raise ValueError("levels must be strictly increasing in n")
    region = specs[0].region
    for sp in specs:
        if sp.region != region:
            raise ValueError("all levels must share the query region")
        if sp.replicas < 1000:
            raise ValueError("convergence diagnostics need >= 1000 replicas per level")
    samples = {sp.n: sample_z_n(sp) for sp in specs}
    stats_out: dict = {}
    for sp in specs:
        per_point = []
        for p in range(len(region)):
            v = samples[sp.n][:, p]
            per_point.append(
                {
                    "mean": float(v.mean()),
                    "var": float(v.var(ddof=1)),
                    "quantiles": {
                        str(q): float(np.quantile(v, q)) for q in (0.05, 0.25, 0.5, 0.75, 0.95)
                    },
                }
            )
        stats_out[sp.n] = per_point
    ks: dict = {}
    for a, b in zip(ns, ns[1:]):
        ks[(a, b)] = [
            float(stats.ks_2samp(samples[a][:, p], samples[b][:, p]).statistic)
            for p in range(len(region))
        ]
    flags = []
    pairs = list(zip(ns, ns[1:]))
    for p in range(len(region)):
        seq = [ks[pair][p] for pair in pairs]
        if any(b >= a for a, b in zip(seq, seq[1:])):
            flags.append(list(region[p]))
    return ConvergenceReport(tuple(ns), tuple(region), stats_out, ks, flags)


def prelimit_bk_surrogate(
    n: int,
    n_replicas: int,
    seed: int,
    g_seed: Optional[int] = None,
    event: Optional[IncreasingEvent] = None,
    diffusive_units: float = 1.0,
    quantile: float = 0.5,
    workers: int = 1,
) -> BkVerdict:
    """The endpoint-variation inequality run at the scaling coupling
    theta = 2 sqrt(n), with starting and ending points separated by
    ``diffusive_units`` times 2 sqrt(n) lattice steps."""
    theta = 2.0 * math.sqrt(n)
    sep = max(1, round(2.0 * math.sqrt(n) * diffusive_units))
    rows = n
    b = n
    m = b + sep
    a = min(1 + sep, b)
    coord = (a, m)
    if g_seed is None:
        g_seed = seed + 1
    if event is None:
        c = rhs_quantile_threshold(
            m, rows, theta, coord, quantile, seed + 2, n_pilot=2048, variant="endpoint", b=b
        )
        event = IncreasingEvent(((coord, c),))
    return bk_endpoint_variation(
        m, rows, b, theta, event, g_seed, n_replicas, seed, workers=workers
    )
