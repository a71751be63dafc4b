"""Explicit density of the line ensemble and estimators built on it.

The joint law of the ensemble values {z_j(i)} over J[m,n] (inverse-gamma
weights, shape parameter theta) has an explicit density with respect to
Lebesgue measure on the free coordinates (the glued pair at columns m, m+1
counted once):

    p(z) = (1/Z) exp( -[four sums of adjacent-value ratios]
                      - 1/z_corner )
           * prod_free z^(-1) * prod_j z_j(m)^(-theta)

where z_corner is the extreme entry of the deepest line: z_n(n) when m >= n,
z_m(n+1) when m < n (the two coincide through the gluing at m = n).  The
reciprocal corner term and the once-per-free-coordinate power counting were
verified symbolically against the inverse-gamma pushforward for shapes up to
4x3; without them the expression is not normalizable.  The MCMC-vs-forward
cross-check in the test suite guards this convention.

Conditioning on the top line being a profile g turns the law of the remaining
(shifted) values into the unconditioned (m-1, n-1) law reweighted by a factor
Gamma_g assembled from exactly the density's ratio terms that cross the cut
below the top line; the same assembly gives the reweighting for stripping w
top lines at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .environment import (
    BLOCK,
    DistributionSpec,
    Purpose,
    WeightGrid,
    iter_blocks,
    sample_grid,
    sample_logw_block,
    stream,
)
from .grsk import (
    IndexSet,
    LineEnsemble,
    build_ensemble,
    ensemble_values_batch,
    f_function,
    virtual_sub_ensemble,
    z1_profile_batch,
)
from .kernels import forward_field

__all__ = [
    "DensityModel",
    "DensityTerms",
    "density_terms",
    "log_density_unnorm",
    "band_crossing_terms",
    "ConditioningProfile",
    "gamma_log_weight",
    "band_log_weight",
    "Functional",
    "ConstFunctional",
    "FThresholdIndicator",
    "CallableFunctional",
    "ISResult",
    "RejectionResult",
    "conditional_expectation_is",
    "conditional_expectation_rejection",
    "EstimationFailedError",
    "McmcResult",
    "mcmc_sample",
    "forward_ensemble_moments",
]

NEG_INF = float("-inf")


class EstimationFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class DensityModel:
    m: int
    n: int
    theta: float

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ValueError("the density is stated for m, n >= 2")
        if not self.theta > 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")


@dataclass(frozen=True)
class DensityTerms:
    """Term list of the unnormalized log-density; the single source of truth
    for everything derived from the density (including cut reweightings)."""

    m: int
    n: int
    ratio_terms: tuple  # ((i,j) numerator, (i,j) denominator) pairs
    corner: tuple  # index of the reciprocal corner term
    free_keys: tuple
    theta_keys: tuple


def density_terms(m: int, n: int) -> DensityTerms:
    idx = IndexSet(m, n)
    ratio = []
    for (i, j) in idx.members():
        if i <= m - 1:
            ratio.append(((i, j), (i + 1, j)))
            if j <= n - 1 and idx.contains(i + 1, j + 1):
                ratio.append(((i + 1, j + 1), (i, j)))
        if i >= m + 2:
            ratio.append(((i, j), (i - 1, j)))
            if j <= n - 1 and idx.contains(i - 1, j + 1):
                ratio.append(((i - 1, j + 1), (i, j)))
    corner = (n, n) if m >= n else (n + 1, m)
    theta_keys = tuple((m, j) for j in range(1, min(m, n) + 1))
    return DensityTerms(m, n, tuple(ratio), corner, tuple(idx.free_keys()), theta_keys)


def log_density_unnorm(model: DensityModel, values) -> float:
    """Log of the unnormalized joint density at the given ensemble values
    (a LineEnsemble of shape (m, n), or a mapping over J[m,n] to log-values
    satisfying the gluing)."""
    terms = density_terms(model.m, model.n)
    if isinstance(values, LineEnsemble):
        if (values.m, values.n) != (model.m, model.n):
            raise ValueError(
                f"ensemble shape {values.m}x{values.n} != model {model.m}x{model.n}"
            )
        lz = values.logz
    else:
        lz = dict(values)
        members = set(IndexSet(model.m, model.n).members())
        if set(lz) != members:
            raise ValueError("values do not cover J[m,n]")
        for j in range(1, min(model.m, model.n) + 1):
            if lz[(model.m, j)] != lz[(model.m + 1, j)]:
                raise ValueError(f"gluing violated at line {j}")
    acc = 0.0
    for num, den in terms.ratio_terms:
        acc -= math.exp(lz[num] - lz[den])
    acc -= math.exp(-lz[terms.corner])
    acc -= sum(lz[k] for k in terms.free_keys)
    acc -= model.theta * sum(lz[k] for k in terms.theta_keys)
    return acc


def band_crossing_terms(m: int, n: int, w: int) -> tuple:
    """The density's ratio terms crossing the cut between line w and line
    w+1, as (position in the (m-w, n-w) top-line profile, column of line w)
    pairs.  Assembled from the term list, not re-derived."""
    if not 1 <= w < min(m, n):
        raise ValueError(f"need 1 <= w < min(m,n)={min(m, n)}")
    out = []
    for num, den in density_terms(m, n).ratio_terms:
        if den[1] == w and num[1] == w + 1:
            out.append((num[0] - w, den[0]))
    return tuple(out)


@dataclass(frozen=True)
class ConditioningProfile:
    """A top-line profile g over positions 1..m+n with g(m) = g(m+1), stored
    in log domain.  Profiles are drawn as realized top lines of pilot samples
    so they always lie in the support."""

    m: int
    n: int
    logg: np.ndarray

    def __post_init__(self):
        lg = np.asarray(self.logg, dtype=np.float64)
        if lg.shape != (self.m + self.n,):
            raise ValueError(f"profile length {lg.shape} != m+n = {self.m + self.n}")
        if not np.isfinite(lg).all():
            raise ValueError("profile must be positive and finite")
        if lg[self.m - 1] != lg[self.m]:
            raise ValueError("profile gluing g(m) = g(m+1) violated")
        lg = lg.copy()
        lg.setflags(write=False)
        object.__setattr__(self, "logg", lg)

    @staticmethod
    def realized(m: int, n: int, theta: float, seed: int, replica: int = 0) -> "ConditioningProfile":
        """Top-line profile of a pilot inverse-gamma sample."""
        logw = sample_logw_block(
            m, n, DistributionSpec.inverse_gamma(theta), seed, replica, 1, Purpose.PILOT
        )
        prof = z1_profile_batch(logw)[0]
        return ConditioningProfile(m, n, prof)


def gamma_log_weight(sub, g: ConditioningProfile) -> float:
    """Log of the (unnormalized) reweighting factor attached to an (m-1,n-1)
    ensemble when conditioning the (m,n) system's top line to be g:
    -sum_{i<=m-1} z_1(i)/g(i) - sum_{m<=i<=m+n-2} z_1(i)/g(i+2)."""
    m, n = g.m, g.n
    if isinstance(sub, LineEnsemble):
        if (sub.m, sub.n) != (m - 1, n - 1):
            raise ValueError(f"expected ensemble of shape {m - 1}x{n - 1}, got {sub.m}x{sub.n}")
        prof = np.array(
            [sub.logz[(i, 1)] for i in range(1, m + n - 1)]
        )
    else:
        prof = np.asarray(sub, dtype=np.float64)
        if prof.shape != (m + n - 2,):
            raise ValueError(f"profile length {prof.shape} != (m-1)+(n-1) = {m + n - 2}")
    return band_log_weight(prof, g.logg, m, n, 1)


def band_log_weight(sub_z1_log, band_line_log, m: int, n: int, w: int):
    """Generalized cut reweighting: strip the top w lines of an (m, n)
    system.  ``sub_z1_log``: top-line profile of the (m-w, n-w) values, over
    positions 1..(m-w)+(n-w) (batched: shape (..., m+n-2w)).
    ``band_line_log``: the conditioned values of line w at positions 1..m+n
    (only the columns appearing in crossing terms are read)."""
    sub = np.asarray(sub_z1_log, dtype=np.float64)
    band = np.asarray(band_line_log, dtype=np.float64)
    acc = 0.0
    for pos, col in band_crossing_terms(m, n, w):
        acc = acc - np.exp(sub[..., pos - 1] - band[..., col - 1])
    return acc


# -- functionals --------------------------------------------------------------


class Functional:
    """A map from an (m', n') line ensemble to a real value (often an
    indicator).  ``eval_grid_batch`` is an optional fast path evaluating the
    functional on the ensembles of freshly sampled grids."""

    def eval_ensemble(self, ens: LineEnsemble) -> float:
        raise NotImplementedError

    def eval_grid_batch(self, logw: np.ndarray) -> Optional[np.ndarray]:
        return None


class ConstFunctional(Functional):
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def eval_ensemble(self, ens: LineEnsemble) -> float:
        return self.value

    def eval_grid_batch(self, logw: np.ndarray) -> np.ndarray:
        return np.full(logw.shape[0], self.value)


class FThresholdIndicator(Functional):
    """Indicator that the ensemble functional F_{a,b} is >= c.

    On a fresh grid's ensemble F_{a,b} equals the grid's single-path value
    t1((a,1),(m',b)) (the j=1 invariance identity), which the fast path uses.
    """

    def __init__(self, a: int, b: int, log_threshold: float):
        self.a = int(a)
        self.b = int(b)
        self.log_threshold = float(log_threshold)

    def eval_ensemble(self, ens: LineEnsemble) -> float:
        val = f_function(ens, self.a, self.b)
        return 1.0 if (val.sign > 0 and val.logmag >= self.log_threshold) else 0.0

    def eval_grid_batch(self, logw: np.ndarray) -> np.ndarray:
        mm, nn = logw.shape[-2], logw.shape[-1]
        f = forward_field(logw, self.a - 1, 0)
        return (f[:, mm - 1, self.b - 1] >= self.log_threshold).astype(float)


class CallableFunctional(Functional):
    def __init__(self, fn: Callable[[LineEnsemble], float]):
        self.fn = fn

    def eval_ensemble(self, ens: LineEnsemble) -> float:
        return float(self.fn(ens))


def _phi_block(functional: Functional, logw: np.ndarray) -> np.ndarray:
    fast = functional.eval_grid_batch(logw)
    if fast is not None:
        return np.asarray(fast, dtype=np.float64)
    values = ensemble_values_batch(logw)
    r, mm, nn = logw.shape
    idx = IndexSet(mm, nn)
    out = np.empty(r)
    members = idx.members()
    for t in range(r):
        ens = LineEnsemble(idx, {k: float(values[k][t]) for k in members})
        out[t] = functional.eval_ensemble(ens)
    return out


# -- self-normalized importance sampling ---------------------------------------


@dataclass
class ISResult:
    estimate: float
    se: float
    ess: float
    n: int
    warning: Optional[str] = None


def conditional_expectation_is(
    model: DensityModel,
    g: ConditioningProfile,
    functional: Functional,
    n_samples: int,
    seed: int,
    ess_floor: float = 100.0,
    purpose: int = Purpose.REPLICA,
) -> ISResult:
    """Self-normalized importance-sampling estimate of the conditional
    expectation of the functional given the (m, n) system's top line = g:
    unconditioned (m-1, n-1) replicas weighted by exp(gamma_log_weight)."""
    if (g.m, g.n) != (model.m, model.n):
        raise ValueError("profile dimensions do not match the model")
    m, n = model.m, model.n
    dist = DistributionSpec.inverse_gamma(model.theta)
    s_w = s_wphi = s_w2 = s_w2phi = s_w2phi2 = 0.0
    for block, count in iter_blocks(n_samples):
        logw = sample_logw_block(m - 1, n - 1, dist, seed, block, count, purpose)
        prof = z1_profile_batch(logw)
        lw = band_log_weight(prof, g.logg, m, n, 1)
        w = np.exp(lw)
        phi = _phi_block(functional, logw)
        s_w += float(w.sum())
        s_wphi += float((w * phi).sum())
        w2 = w * w
        s_w2 += float(w2.sum())
        s_w2phi += float((w2 * phi).sum())
        s_w2phi2 += float((w2 * phi * phi).sum())
    if s_w <= 0.0:
        raise EstimationFailedError("all importance weights vanished")
    est = s_wphi / s_w
    var = max(s_w2phi2 - 2 * est * s_w2phi + est * est * s_w2, 0.0)
    se = math.sqrt(var) / s_w
    ess = s_w * s_w / s_w2 if s_w2 > 0 else 0.0
    warning = None
    if ess < ess_floor:
        warning = f"degenerate weights: effective sample size {ess:.1f} < {ess_floor}"
    return ISResult(est, se, ess, n_samples, warning)


# -- window-rejection oracle ------------------------------------------------------


@dataclass
class RejectionResult:
    estimate: float
    se: float
    acceptance_rate: float
    n_samples: int
    n_accepted: int


def conditional_expectation_rejection(
    model: DensityModel,
    g: ConditioningProfile,
    window_eps: float,
    functional: Functional,
    n_samples: int,
    seed: int,
    target_accepts: Optional[int] = None,
    purpose: int = Purpose.REJECTION,
    centered: bool = True,
) -> RejectionResult:
    """Slow conditioning oracle: sample full (m, n) grids, accept those whose
    top-line profile lies in multiplicative windows of relative width eps
    around g, and average the functional of the accepted grids' shifted
    sub-ensembles.

    ``centered=True`` places the window at [g (1+eps)^{-1/2}, g (1+eps)^{1/2}]
    (geometric center g), which cancels the first-order-in-eps bias of the
    left-anchored window [g, g(1+eps)] while keeping the acceptance rate.
    """
    if window_eps <= 0:
        raise ValueError("window_eps must be > 0")
    m, n = model.m, model.n
    dist = DistributionSpec.inverse_gamma(model.theta)
    width = math.log1p(window_eps)
    lo = -0.5 * width if centered else 0.0
    free_pos = [i for i in range(1, m + n + 1) if i != m + 1]
    vals: list = []
    seen = 0
    for block, count in iter_blocks(n_samples):
        logw = sample_logw_block(m, n, dist, seed, block, count, purpose)
        prof = z1_profile_batch(logw)
        d = prof[:, [p - 1 for p in free_pos]] - g.logg[[p - 1 for p in free_pos]]
        ok = ((d >= lo) & (d <= lo + width)).all(axis=1)
        seen += count
        for t in np.nonzero(ok)[0]:
            grid = WeightGrid(m, n, logw[t], dist, seed)
            sub = virtual_sub_ensemble(build_ensemble(grid))
            vals.append(functional.eval_ensemble(sub))
        if target_accepts is not None and len(vals) >= target_accepts:
            break
    if not vals:
        raise EstimationFailedError(
            f"no samples hit the conditioning window after {seen} draws; "
            "enlarge window_eps or shorten the profile"
        )
    arr = np.array(vals)
    est = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else float("inf")
    return RejectionResult(est, se, len(arr) / seen, seen, len(arr))


# -- random-walk Metropolis targeting the density -----------------------------------


@dataclass
class McmcResult:
    samples: Dict[tuple, np.ndarray]
    acceptance_rate: float
    proposal_scale: float
    degenerate_proposal: bool
    steps: int
    burn_in: int
    thin: int

    def mean(self, key: tuple) -> float:
        return float(self.samples[key].mean())

    def batch_se(self, key: tuple, n_batches: int = 20) -> float:
        """Batch-means standard error of the mean (autocorrelation aware)."""
        x = self.samples[key]
        nb = min(n_batches, max(2, len(x) // 10))
        usable = (len(x) // nb) * nb
        bm = x[:usable].reshape(nb, -1).mean(axis=1)
        return float(bm.std(ddof=1) / math.sqrt(nb))

    def lag1_autocorr(self, key: tuple) -> float:
        x = self.samples[key]
        if len(x) < 3 or x.std() == 0:
            return 0.0
        xc = x - x.mean()
        return float((xc[:-1] * xc[1:]).mean() / (xc * xc).mean())


def _expand_state(idx: IndexSet, free_keys, x: np.ndarray) -> dict:
    lz = {k: x[p] for p, k in enumerate(free_keys)}
    for (a, b) in idx.glued_pairs():
        lz[b] = lz[a]
    return lz


def mcmc_sample(
    model: DensityModel,
    steps: int,
    seed: int,
    burn_in: Optional[int] = None,
    thin: int = 1,
    proposal_scale: Optional[float] = None,
    target_acceptance: float = 0.3,
) -> McmcResult:
    """Random-walk Metropolis in the log-coordinates of the free ensemble
    values (the glued pair updated as one variable), targeting the explicit
    density.  The proposal scale is tuned toward the target acceptance during
    burn-in and then frozen."""
    m, n = model.m, model.n
    idx = IndexSet(m, n)
    free_keys = idx.free_keys()
    d = len(free_keys)
    if burn_in is None:
        burn_in = max(200, steps // 5)
    rng = stream(seed, block=0, purpose=Purpose.MCMC)

    # initial state: a forward-sampled ensemble (always in the support)
    init_grid = sample_grid(m, n, DistributionSpec.inverse_gamma(model.theta), seed, replica=1)
    ens0 = build_ensemble(init_grid)
    x = np.array([ens0.logz[k] for k in free_keys])

    def log_target(xv: np.ndarray) -> float:
        lz = _expand_state(idx, free_keys, xv)
        # + sum(x): Jacobian of the log-coordinate change
        return log_density_unnorm(model, lz) + float(xv.sum())

    scale = 0.5 / math.sqrt(d) if proposal_scale is None else float(proposal_scale)
    tune = proposal_scale is None
    degenerate = scale == 0.0
    lp = log_target(x)
    acc_window = 0
    accepted = 0
    kept: list = []
    total = burn_in + steps
    for step in range(total):
        prop = x + scale * rng.standard_normal(d)
        lp_prop = log_target(prop)
        if lp_prop >= lp or rng.random() < math.exp(lp_prop - lp):
            x, lp = prop, lp_prop
            if step >= burn_in:
                accepted += 1
            acc_window += 1
        if tune and step < burn_in and (step + 1) % 100 == 0:
            rate = acc_window / 100.0
            scale *= math.exp(0.5 * (rate - target_acceptance))
            acc_window = 0
        elif (step + 1) % 100 == 0:
            acc_window = 0
        if step >= burn_in and (step - burn_in) % thin == 0:
            kept.append(x.copy())
    arr = np.array(kept)
    samples = {k: arr[:, p] for p, k in enumerate(free_keys)}
    for (a, b) in idx.glued_pairs():
        samples[b] = samples[a]
    return McmcResult(
        samples=samples,
        acceptance_rate=accepted / max(steps, 1),
        proposal_scale=scale,
        degenerate_proposal=degenerate,
        steps=steps,
        burn_in=burn_in,
        thin=thin,
    )


def forward_ensemble_moments(
    m: int, n: int, theta: float, n_samples: int, seed: int, purpose: int = Purpose.PILOT
):
    """Mean and standard error of log z_j(i) per ensemble coordinate, from
    direct forward sampling; the oracle the MCMC is validated against."""
    dist = DistributionSpec.inverse_gamma(theta)
    keys = IndexSet(m, n).members()
    s1 = {k: 0.0 for k in keys}
    s2 = {k: 0.0 for k in keys}
    total = 0
    for block, count in iter_blocks(n_samples):
        logw = sample_logw_block(m, n, dist, seed, block, count, purpose)
        values = ensemble_values_batch(logw)
        total += count
        for k in keys:
            s1[k] += float(values[k].sum())
            s2[k] += float((values[k] ** 2).sum())
    out = {}
    for k in keys:
        mean = s1[k] / total
        var = max(s2[k] / total - mean * mean, 0.0)
        out[k] = (mean, math.sqrt(var / total))
    return out
