"""Monte Carlo tests of the BK-type inequality and its exact counterexamples.

The inequality under test: conditional on the top-line profile, the family of
normalized two-path partition functions is stochastically dominated (for
increasing events) by the corresponding unconditioned single-path family of
the smaller system.  The left side is estimated with the exact-conditional
reweighting estimator (the same manipulation the inequality's proof uses);
the right side by direct Monte Carlo.  Counterexamples outside the
inverse-gamma law are computed exactly (Bernoulli) or by a deterministic
implication check (uniform).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .environment import (
    DistributionSpec,
    Purpose,
    iter_blocks,
    sample_logw_block,
    stream,
)
from .gibbs import ConditioningProfile, band_log_weight
from .grsk import build_ensemble, z1_profile_batch
from .environment import WeightGrid
from .kernels import backward_field, forward_field, logdet_batch
from .parallel import pmap_ordered

__all__ = [
    "IncreasingEvent",
    "MultiPointSpec",
    "BkVerdict",
    "CounterexampleResult",
    "bk_log_gamma",
    "bk_endpoint_variation",
    "bk_multipoint",
    "counterexample_bernoulli",
    "counterexample_uniform",
    "rhs_quantile_threshold",
]

NEG_INF = float("-inf")


@dataclass(frozen=True)
class IncreasingEvent:
    """Conjunction/disjunction of coordinatewise lower bounds: the membership
    indicator is nondecreasing in every family value.  Thresholds are in log
    scale (the compared family values are log partition functions; the log is
    monotone so the event is the same).  Only >=-type comparisons exist;
    asking for a decreasing comparison is refused."""

    terms: tuple  # ((coord key, log threshold), ...)
    mode: str = "all"
    direction: str = "ge"

    def __post_init__(self):
        if self.mode not in ("all", "any"):
            raise ValueError(f"mode must be 'all' or 'any', got {self.mode!r}")
        if self.direction != "ge":
            raise ValueError(
                "only increasing events are admissible; decreasing (<=) "
                "events are refused"
            )
        if not self.terms:
            raise ValueError("event needs at least one term")
        object.__setattr__(self, "terms", tuple((c, float(t)) for c, t in self.terms))

    @property
    def coords(self) -> tuple:
        return tuple(c for c, _ in self.terms)

    def indicator(self, values: np.ndarray, coord_index: dict) -> np.ndarray:
        """values: (..., n_coords) log family values."""
        checks = [values[..., coord_index[c]] >= t for c, t in self.terms]
        stacked = np.stack(checks, axis=-1)
        agg = stacked.all(axis=-1) if self.mode == "all" else stacked.any(axis=-1)
        return agg.astype(float)


@dataclass(frozen=True)
class MultiPointSpec:
    """Tuples (a; l) from the index family of the multi-point inequality:
    w < a_1 < ... < a_k <= m and n-w > l_1 > ... > l_k >= 0."""

    w: int
    tuples: tuple

    def __init__(self, w: int, tuples: Sequence):
        object.__setattr__(self, "w", int(w))
        norm = []
        for a_vec, l_vec in tuples:
            norm.append((tuple(int(a) for a in a_vec), tuple(int(l) for l in l_vec)))
        object.__setattr__(self, "tuples", tuple(norm))

    def validate(self, m: int, n: int):
        if not 1 <= self.w < min(m, n):
            raise ValueError(f"need 1 <= w < min(m,n)={min(m, n)}")
        for a_vec, l_vec in self.tuples:
            k = len(a_vec)
            if k != len(l_vec) or k < 1:
                raise ValueError(f"tuple ({a_vec}; {l_vec}) is not a pair of k-vectors")
            if list(a_vec) != sorted(set(a_vec)) or a_vec[0] <= self.w or a_vec[-1] > m:
                raise ValueError(f"a-vector {a_vec} outside {self.w} < a <= {m}")
            if list(l_vec) != sorted(set(l_vec), reverse=True) or l_vec[0] >= n - self.w or l_vec[-1] < 0:
                raise ValueError(f"l-vector {l_vec} outside {n - self.w} > l >= 0")


@dataclass
class BkVerdict:
    lhs_estimate: float
    lhs_se: float
    rhs_estimate: float
    rhs_se: float
    margin: float = field(init=False)
    passed: bool = field(init=False)
    inconclusive: bool = False
    ess: float = float("nan")
    n_replicas: int = 0
    warning: Optional[str] = None

    def __post_init__(self):
        self.margin = self.lhs_estimate - self.rhs_estimate
        self.passed = self.margin <= 3.0 * (self.lhs_se + self.rhs_se)

    def to_dict(self) -> dict:
        return {
            "lhs_estimate": self.lhs_estimate,
            "lhs_se": self.lhs_se,
            "rhs_estimate": self.rhs_estimate,
            "rhs_se": self.rhs_se,
            "margin": self.margin,
            "pass": self.passed,
            "inconclusive": self.inconclusive,
            "ess": self.ess,
            "n_replicas": self.n_replicas,
            "warning": self.warning,
        }


# -- family evaluation helpers ---------------------------------------------------


def _family_t1(logw: np.ndarray, coords, mm: int) -> np.ndarray:
    """log T_1((a-1,1),(m',b)) per coordinate (a, b) on each replica grid of
    shape (m', n'); shared forward field per distinct a."""
    fields = {}
    cols = []
    for (a, b) in coords:
        if a - 1 not in fields:
            fields[a - 1] = forward_field(logw, a - 2, 0)
        cols.append(fields[a - 1][:, mm - 1, b - 1])
    return np.stack(cols, axis=-1)


def _moments_from(phi: np.ndarray, lw: Optional[np.ndarray]) -> np.ndarray:
    """(sum w, sum w phi, sum w^2, sum w^2 phi, sum w^2 phi^2, count)."""
    if lw is None:
        w = np.ones_like(phi)
    else:
        w = np.exp(lw)
    w2 = w * w
    return np.array(
        [
            w.sum(),
            (w * phi).sum(),
            w2.sum(),
            (w2 * phi).sum(),
            (w2 * phi * phi).sum(),
            float(len(phi)),
        ]
    )


def _selfnorm_estimate(mom: np.ndarray):
    s_w, s_wphi, s_w2, s_w2phi, s_w2phi2, _ = mom
    est = s_wphi / s_w
    var = max(s_w2phi2 - 2 * est * s_w2phi + est * est * s_w2, 0.0)
    se = math.sqrt(var) / s_w
    ess = s_w * s_w / s_w2 if s_w2 > 0 else 0.0
    return est, se, ess


def _plain_estimate(mom: np.ndarray):
    # unweighted moments: w = 1, so mom[4] = sum phi^2
    _, s_phi, _, _, s_phi2, count = mom
    est = s_phi / count
    var = max(s_phi2 / count - est * est, 0.0)
    return est, math.sqrt(var / count)


# -- the standard experiment ------------------------------------------------------


@dataclass(frozen=True)
class _BkConfig:
    m: int
    n: int
    theta: float
    seed: int
    coords: tuple
    event: IncreasingEvent
    logg: Optional[tuple]  # None for the unweighted side
    purpose: int


def _bk_block(cfg: _BkConfig, block_count) -> np.ndarray:
    block, count = block_count
    mm, nn = cfg.m - 1, cfg.n - 1
    logw = sample_logw_block(
        mm, nn, DistributionSpec.inverse_gamma(cfg.theta), cfg.seed, block, count, cfg.purpose
    )
    fam = _family_t1(logw, cfg.coords, mm)
    coord_index = {c: p for p, c in enumerate(cfg.coords)}
    phi = cfg.event.indicator(fam, coord_index)
    lw = None
    if cfg.logg is not None:
        prof = z1_profile_batch(logw)
        lw = band_log_weight(prof, np.array(cfg.logg), cfg.m, cfg.n, 1)
    return _moments_from(phi, lw)


def _reduce(blocks) -> np.ndarray:
    return np.add.reduce(np.stack(blocks, axis=0), axis=0)


def bk_log_gamma(
    m: int,
    n: int,
    theta: float,
    event: IncreasingEvent,
    g_seed: int,
    n_replicas: int,
    seed: int,
    workers: int = 1,
    ess_floor: float = 100.0,
) -> BkVerdict:
    """Conditional-vs-unconditioned comparison for the normalized two-path
    family: the left side reweights unconditioned (m-1, n-1) replicas by the
    top-line conditioning factor; the right side is the plain law of the
    single-path family on independent replicas."""
    if m < 2 or n < 2:
        raise ValueError("need m, n >= 2")
    coords = event.coords
    for (a, b) in coords:
        if not (2 <= a <= m and 1 <= b <= n - 1):
            raise ValueError(f"event coordinate ({a},{b}) outside [2,{m}] x [1,{n - 1}]")
    g = ConditioningProfile.realized(m, n, theta, g_seed)
    blocks = list(iter_blocks(n_replicas))
    lhs_cfg = _BkConfig(m, n, theta, seed, coords, event, tuple(g.logg), Purpose.REPLICA)
    rhs_cfg = _BkConfig(m, n, theta, seed, coords, event, None, Purpose.RHS_REPLICA)
    lhs_mom = _reduce(pmap_ordered(partial(_bk_block, lhs_cfg), blocks, workers))
    rhs_mom = _reduce(pmap_ordered(partial(_bk_block, rhs_cfg), blocks, workers))
    lhs, lhs_se, ess = _selfnorm_estimate(lhs_mom)
    rhs, rhs_se = _plain_estimate(rhs_mom)
    verdict = BkVerdict(lhs, lhs_se, rhs, rhs_se, ess=ess, n_replicas=n_replicas)
    if ess < ess_floor:
        verdict.inconclusive = True
        verdict.warning = f"degenerate weights: ESS {ess:.1f} < {ess_floor}"
    return verdict


# -- endpoint variation on the second-to-top row ----------------------------------


@dataclass(frozen=True)
class _BkEndpointConfig:
    m: int
    n: int
    b: int
    theta: float
    seed: int
    coords: tuple  # (a, b') pairs
    event: IncreasingEvent
    logg: Optional[tuple]
    purpose: int


def _bk_endpoint_block(cfg: _BkEndpointConfig, block_count) -> np.ndarray:
    block, count = block_count
    m, n, b = cfg.m, cfg.n, cfg.b
    mm, nn = m - 1, n - 1
    logw = sample_logw_block(
        mm, nn, DistributionSpec.inverse_gamma(cfg.theta), cfg.seed, block, count, cfg.purpose
    )
    coord_index = {c: p for p, c in enumerate(cfg.coords)}
    if cfg.logg is None:
        # plain single-path family on the full grid
        fields = {}
        cols = []
        for (a, bp) in cfg.coords:
            if bp not in fields:
                fields[bp] = backward_field(logw, bp - 2, nn - 1)
            cols.append(fields[bp][:, a - 2, 0])
        fam = np.stack(cols, axis=-1)
        phi = cfg.event.indicator(fam, coord_index)
        return _moments_from(phi, None)
    # conditional side: split at column b; the first b-1 columns carry the
    # reweighting, the extension columns are common to both laws
    sub = logw[:, : b - 1, :]
    ext = logw[:, b - 1 :, :]
    a_fields = {}
    rloc = {}
    cols = []
    for (a, bp) in cfg.coords:
        if a not in a_fields:
            # A_l(a) = T_1((a-1,1),(b-1,l)) over the sub-grid, all l
            a_fields[a] = forward_field(sub, a - 2, 0)[:, b - 2, :]
        if bp not in rloc:
            # R_l(b') = T_1((b,l),(b'-1,n-1)) over the extension columns;
            # column b is local 0, so column b'-1 is local b'-1-b
            rloc[bp] = backward_field(ext, bp - 1 - b, nn - 1)[:, 0, :]
        # family value: logsumexp over l of A_l + R_l
        s = a_fields[a] + rloc[bp]
        mx = s.max(axis=-1)
        with np.errstate(invalid="ignore"):
            val = mx + np.log(np.exp(s - mx[:, None]).sum(axis=-1))
        val = np.nan_to_num(val, nan=NEG_INF, neginf=NEG_INF)
        cols.append(val)
    fam = np.stack(cols, axis=-1)
    phi = cfg.event.indicator(fam, coord_index)
    prof = z1_profile_batch(sub)
    lw = band_log_weight(prof, np.array(cfg.logg), b, n, 1)
    return _moments_from(phi, lw)


def bk_endpoint_variation(
    m: int,
    n: int,
    b: int,
    theta: float,
    event: IncreasingEvent,
    g_seed: int,
    n_replicas: int,
    seed: int,
    workers: int = 1,
    ess_floor: float = 100.0,
) -> BkVerdict:
    """Same architecture with the second endpoint varying along row n-1 to
    the right of the conditioned column b: family values decompose at column
    b into conditioned (b-1, n-1) partition functions times common extension
    factors, so the reweighting again acts on an unconditioned sub-grid."""
    if not (2 <= b < m):
        raise ValueError(f"need 2 <= b < m, got b={b}, m={m}")
    if n < 2:
        raise ValueError("need n >= 2")
    coords = event.coords
    for (a, bp) in coords:
        if not (2 <= a <= b and b + 1 <= bp <= m):
            raise ValueError(f"event coordinate ({a},{bp}) outside [2,{b}] x [{b + 1},{m}]")
    g = ConditioningProfile.realized(b, n, theta, g_seed)
    blocks = list(iter_blocks(n_replicas))
    lhs_cfg = _BkEndpointConfig(m, n, b, theta, seed, coords, event, tuple(g.logg), Purpose.REPLICA)
    rhs_cfg = _BkEndpointConfig(m, n, b, theta, seed, coords, event, None, Purpose.RHS_REPLICA)
    lhs_mom = _reduce(pmap_ordered(partial(_bk_endpoint_block, lhs_cfg), blocks, workers))
    rhs_mom = _reduce(pmap_ordered(partial(_bk_endpoint_block, rhs_cfg), blocks, workers))
    lhs, lhs_se, ess = _selfnorm_estimate(lhs_mom)
    rhs, rhs_se = _plain_estimate(rhs_mom)
    verdict = BkVerdict(lhs, lhs_se, rhs, rhs_se, ess=ess, n_replicas=n_replicas)
    if ess < ess_floor:
        verdict.inconclusive = True
        verdict.warning = f"degenerate weights: ESS {ess:.1f} < {ess_floor}"
    return verdict


# -- multi-point generalization ----------------------------------------------------


@dataclass(frozen=True)
class _BkMultiConfig:
    m: int
    n: int
    w: int
    theta: float
    seed: int
    tuples: tuple
    event: IncreasingEvent
    band: Optional[tuple]  # line-w values of the pilot, positions 1..m+n
    purpose: int


def _bk_multi_block(cfg: _BkMultiConfig, block_count) -> np.ndarray:
    block, count = block_count
    m, n, w = cfg.m, cfg.n, cfg.w
    ms, ns = m - w, n - w
    logw = sample_logw_block(
        ms, ns, DistributionSpec.inverse_gamma(cfg.theta), cfg.seed, block, count, cfg.purpose
    )
    fields = {}
    cols = []
    for (a_vec, l_vec) in cfg.tuples:
        k = len(a_vec)
        if min(l_vec) == 0:
            cols.append(np.full(count, NEG_INF))
            continue
        mat = np.empty((count, k, k))
        for p, a in enumerate(a_vec):
            if a - w not in fields:
                fields[a - w] = forward_field(logw, a - w - 1, 0)
            for q, l in enumerate(l_vec):
                mat[:, p, q] = fields[a - w][:, ms - 1, l - 1]
        sign, ld = logdet_batch(mat)
        cols.append(np.where(sign > 0, ld, NEG_INF))
    fam = np.stack(cols, axis=-1)
    coord_index = {c: p for p, c in enumerate(cfg.tuples)}
    phi = cfg.event.indicator(fam, coord_index)
    lw = None
    if cfg.band is not None:
        prof = z1_profile_batch(logw)
        lw = band_log_weight(prof, np.array(cfg.band), m, n, w)
    return _moments_from(phi, lw)


def bk_multipoint(
    m: int,
    n: int,
    w: int,
    theta: float,
    spec: MultiPointSpec,
    event: IncreasingEvent,
    g_seed: int,
    n_replicas: int,
    seed: int,
    workers: int = 1,
    ess_floor: float = 100.0,
) -> BkVerdict:
    """w-padded generalization: condition on the top w lines of an (m, n)
    pilot; the left side reweights unconditioned (m-w, n-w) replicas with the
    cut factor assembled from the density's term list; families are k-path
    partition functions."""
    spec.validate(m, n)
    if w != spec.w:
        raise ValueError(f"spec.w={spec.w} != w={w}")
    for c in event.coords:
        if c not in spec.tuples:
            raise ValueError(f"event coordinate {c} is not one of the spec tuples")
    # pilot: realized line-w values at all columns of line w
    pilot_logw = sample_logw_block(
        m, n, DistributionSpec.inverse_gamma(theta), g_seed, 0, 1, Purpose.PILOT
    )[0]
    pilot = build_ensemble(WeightGrid(m, n, pilot_logw, DistributionSpec.inverse_gamma(theta), g_seed))
    band = np.full(m + n, np.nan)
    for i in range(1, m + n + 1):
        if pilot.index.contains(i, w):
            band[i - 1] = pilot.logz[(i, w)]
    blocks = list(iter_blocks(n_replicas))
    lhs_cfg = _BkMultiConfig(m, n, w, theta, seed, spec.tuples, event, tuple(band), Purpose.REPLICA)
    rhs_cfg = _BkMultiConfig(m, n, w, theta, seed, spec.tuples, event, None, Purpose.RHS_REPLICA)
    lhs_mom = _reduce(pmap_ordered(partial(_bk_multi_block, lhs_cfg), blocks, workers))
    rhs_mom = _reduce(pmap_ordered(partial(_bk_multi_block, rhs_cfg), blocks, workers))
    lhs, lhs_se, ess = _selfnorm_estimate(lhs_mom)
    rhs, rhs_se = _plain_estimate(rhs_mom)
    verdict = BkVerdict(lhs, lhs_se, rhs, rhs_se, ess=ess, n_replicas=n_replicas)
    if ess < ess_floor:
        verdict.inconclusive = True
        verdict.warning = f"degenerate weights: ESS {ess:.1f} < {ess_floor}"
    return verdict


# -- exact counterexamples ----------------------------------------------------------


@dataclass
class CounterexampleResult:
    lhs: float
    rhs: float
    violated: Optional[bool]
    covered: bool = True
    note: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "violated": self.violated,
            "covered": self.covered,
            "note": self.note,
        }


def counterexample_bernoulli(p: float, t: float) -> CounterexampleResult:
    """Exact enumeration over the 16 Bernoulli weight configurations of the
    2x2 grid: P(T_2/2 >= t | T_1 = 2) versus P(T_1 of the 1x1 system >= t)."""
    if not (0 < p < 1):
        raise ValueError(f"p must be in (0,1), got {p}")
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t}")
    cond_mass = 0.0
    cond_hit = 0.0
    for bits in product((0, 1), repeat=4):
        x11, x12, x21, x22 = bits
        prob = math.prod(p if bit else (1 - p) for bit in bits)
        t1_2 = x11 * x22 * (x12 + x21)
        t2_2 = x11 * x12 * x21 * x22
        if t1_2 == 2:
            cond_mass += prob
            if t2_2 / 2.0 >= t:
                cond_hit += prob
    # the 1x1 system: T_1 = X_(1,1)
    rhs = sum((p if x else (1 - p)) for x in (0, 1) if x >= t)
    lhs = cond_hit / cond_mass if cond_mass > 0 else float("nan")
    return CounterexampleResult(lhs, rhs, violated=lhs > rhs)


def counterexample_uniform(delta: float, t: float, n_samples: int, seed: int) -> CounterexampleResult:
    """Uniform-weight counterexample: conditioning on T_1 >= 2 - delta forces
    T_2/T_1 >= 1/2 - delta almost surely, while P(T_1 of the 1x1 system >= t)
    = 1 - t.  Verified by sampling the region [1-delta, 1]^4 (which contains
    the conditioning support) and checking the implication sample by sample."""
    if not (0 < delta < 0.5):
        raise ValueError(f"delta must be in (0, 1/2), got {delta}")
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t}")
    if t > 0.5 - delta + 1e-12:  # boundary t = 1/2 - delta is covered
        return CounterexampleResult(
            float("nan"),
            1.0 - t,
            violated=None,
            covered=False,
            note=f"t={t} > 1/2 - delta={0.5 - delta}: outside the guaranteed region",
        )
    rng = stream(seed, purpose=Purpose.REPLICA)
    x = 1.0 - delta * rng.random((n_samples, 4))
    t1 = x[:, 0] * x[:, 3] * (x[:, 1] + x[:, 2])
    hit = t1 >= 2.0 - delta
    n_hit = int(hit.sum())
    if n_hit == 0:
        raise RuntimeError(
            f"no sample hit the conditioning set T_1 >= {2 - delta} out of "
            f"{n_samples}; increase n_samples"
        )
    ratio = x[hit, 1] * x[hit, 2] / (x[hit, 1] + x[hit, 2])
    ok = ratio >= t
    lhs = float(ok.mean())
    rhs = 1.0 - t
    return CounterexampleResult(
        lhs, rhs, violated=lhs > rhs, note=f"{n_hit} conditioning hits"
    )


# -- event helpers ------------------------------------------------------------------


def rhs_quantile_threshold(
    m: int,
    n: int,
    theta: float,
    coord,
    quantile: float,
    seed: int,
    n_pilot: int = 4096,
    variant: str = "standard",
    b: Optional[int] = None,
    w: Optional[int] = None,
) -> float:
    """Log threshold at an empirical quantile of the right-hand-side family
    coordinate, from an independent pilot stream."""
    vals: list = []
    for block, count in iter_blocks(n_pilot):
        if variant == "standard":
            logw = sample_logw_block(
                m - 1, n - 1, DistributionSpec.inverse_gamma(theta), seed, block, count, Purpose.PILOT
            )
            fam = _family_t1(logw, (coord,), m - 1)
        elif variant == "endpoint":
            logw = sample_logw_block(
                m - 1, n - 1, DistributionSpec.inverse_gamma(theta), seed, block, count, Purpose.PILOT
            )
            a, bp = coord
            f = backward_field(logw, bp - 2, n - 2)
            fam = f[:, a - 2, 0][:, None]
        elif variant == "multipoint":
            cfgw = int(w)
            ms = m - cfgw
            logw = sample_logw_block(
                ms, n - cfgw, DistributionSpec.inverse_gamma(theta), seed, block, count, Purpose.PILOT
            )
            a_vec, l_vec = coord
            k = len(a_vec)
            mat = np.empty((count, k, k))
            for p, a in enumerate(a_vec):
                f = forward_field(logw, a - cfgw - 1, 0)
                for q, l in enumerate(l_vec):
                    mat[:, p, q] = f[:, ms - 1, l - 1]
            sign, ld = logdet_batch(mat)
            fam = np.where(sign > 0, ld, NEG_INF)[:, None]
        else:
            raise ValueError(f"unknown variant {variant!r}")
        vals.append(fam[:, 0])
    allv = np.concatenate(vals)
    return float(np.quantile(allv, quantile))


_ANY_EVENT = IncreasingEvent(((("_", "_"), NEG_INF),), mode="any")
