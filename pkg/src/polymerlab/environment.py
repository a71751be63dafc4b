"""Vertex-weight fields for the polymer models.

Grids are immutable arrays of log-weights plus distribution metadata and the
seed that produced them.  Sampling uses counter-based Philox streams keyed by
(seed, replica-block, purpose) so that every draw is independent of iteration
order and of worker count: replica r always lives at offset r % BLOCK of
block r // BLOCK, and each block is generated in a single vectorized call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .lognum import LogNum

__all__ = [
    "DistributionSpec",
    "WeightGrid",
    "sample_grid",
    "explicit_grid",
    "sample_logw_block",
    "iter_blocks",
    "stream",
    "BLOCK",
    "Purpose",
]

NEG_INF = float("-inf")
MASK64 = (1 << 64) - 1

# Fixed second key word, so a bare 64-bit seed still yields a full Philox key.
_KEY_PAD = 0x9E3779B97F4A7C15

# Replica draws are grouped into fixed-size blocks; the block index enters the
# Philox counter, making results independent of how blocks are distributed
# over workers.
BLOCK = 1024


class Purpose:
    """Stream namespaces, so e.g. pilot draws never collide with replicas."""

    SINGLE = 0
    REPLICA = 1
    RHS_REPLICA = 2
    PILOT = 3
    MCMC = 4
    REJECTION = 5


def stream(seed: int, block: int = 0, purpose: int = 0) -> np.random.Generator:
    """Counter-based generator for (seed, block, purpose); reproducible
    regardless of how many other streams were consumed before it."""
    key = np.array([seed & MASK64, _KEY_PAD], dtype=np.uint64)
    counter = np.array([0, block & MASK64, purpose & MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class DistributionSpec:
    """Vertex-weight law: inverse-gamma(theta), Bernoulli(p), uniform(0,1],
    or explicit values."""

    kind: str
    theta: Optional[float] = None
    p: Optional[float] = None

    _KINDS = ("inverse_gamma", "bernoulli", "uniform01", "explicit")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "inverse_gamma":
            if self.theta is None or not (self.theta > 0):
                raise ValueError(f"inverse-gamma requires theta > 0, got {self.theta}")
        if self.kind == "bernoulli":
            if self.p is None or not (0 < self.p < 1):
                raise ValueError(f"bernoulli requires p in (0,1), got {self.p}")

    @staticmethod
    def inverse_gamma(theta: float) -> "DistributionSpec":
        return DistributionSpec("inverse_gamma", theta=theta)

    @staticmethod
    def bernoulli(p: float) -> "DistributionSpec":
        return DistributionSpec("bernoulli", p=p)

    @staticmethod
    def uniform01() -> "DistributionSpec":
        return DistributionSpec("uniform01")

    def label(self) -> str:
        if self.kind == "inverse_gamma":
            return f"inverse_gamma({self.theta:g})"
        if self.kind == "bernoulli":
            return f"bernoulli({self.p:g})"
        return self.kind


def _draw_logw(rng: np.random.Generator, dist: DistributionSpec, shape) -> np.ndarray:
    if dist.kind == "inverse_gamma":
        # X = 1/G with G ~ gamma(theta, 1); numpy's standard_gamma is the
        # usual rejection sampler, valid for every theta > 0.
        g = rng.standard_gamma(dist.theta, size=shape)
        return -np.log(g)
    if dist.kind == "bernoulli":
        u = rng.random(size=shape)
        return np.where(u < dist.p, 0.0, NEG_INF)
    if dist.kind == "uniform01":
        # 1 - U in (0, 1]: strictly positive weights
        return np.log1p(-rng.random(size=shape))
    raise ValueError(f"cannot sample kind {dist.kind!r}")


@dataclass(frozen=True)
class WeightGrid:
    """Immutable m x n field of nonnegative vertex weights in log domain.

    ``logw[i-1, j-1]`` is log X_(i,j) for column i in 1..m, row j in 1..n;
    -inf encodes an exact zero (Bernoulli grids only).
    """

    m: int
    n: int
    logw: np.ndarray = field(repr=False)
    dist: DistributionSpec
    seed: Optional[int] = None

    def __post_init__(self):
        lw = np.asarray(self.logw, dtype=np.float64)
        if lw.shape != (self.m, self.n):
            raise ValueError(f"logw shape {lw.shape} != ({self.m},{self.n})")
        if np.isnan(lw).any() or (lw == np.inf).any():
            raise ValueError("log-weights must be finite or -inf")
        lw = lw.copy()
        lw.setflags(write=False)
        object.__setattr__(self, "logw", lw)

    def weight(self, i: int, j: int) -> LogNum:
        self._check(i, j)
        return LogNum.from_log(float(self.logw[i - 1, j - 1]))

    def _check(self, i: int, j: int):
        if not (1 <= i <= self.m and 1 <= j <= self.n):
            raise IndexError(f"point ({i},{j}) outside 1..{self.m} x 1..{self.n}")

    @property
    def has_zero(self) -> bool:
        return bool(np.isneginf(self.logw).any())

    # -- text fixture format -------------------------------------------------

    def to_text(self) -> str:
        """Header "m n", then n rows of m decimal weights, top row (j = n)
        first so the file reads like the lattice picture."""
        lines = [f"{self.m} {self.n}"]
        w = np.exp(self.logw)
        for j in range(self.n, 0, -1):
            lines.append(" ".join(format(w[i - 1, j - 1], ".17g") for i in range(1, self.m + 1)))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "WeightGrid":
        rows = [ln for ln in text.strip().splitlines() if ln.strip()]
        try:
            m, n = (int(t) for t in rows[0].split())
        except Exception as exc:
            raise ValueError(f"bad grid header {rows[0]!r}") from exc
        if len(rows) != n + 1:
            raise ValueError(f"expected {n} weight rows, found {len(rows) - 1}")
        vals = np.empty((m, n))
        for r, ln in enumerate(rows[1:]):
            j = n - r
            entries = [float(t) for t in ln.split()]
            if len(entries) != m:
                raise ValueError(f"row {r + 1}: expected {m} entries, found {len(entries)}")
            vals[:, j - 1] = entries
        return explicit_grid(vals)


def sample_grid(m: int, n: int, dist: DistributionSpec, seed: int, replica: int = 0) -> WeightGrid:
    """I.i.d. weight field; identical (dims, dist, seed, replica) arguments
    yield bit-identical grids."""
    if m < 1 or n < 1:
        raise ValueError(f"grid dims must be >= 1, got {m}x{n}")
    if dist.kind == "explicit":
        raise ValueError("explicit distributions carry their own values; use explicit_grid")
    rng = stream(seed, block=replica, purpose=Purpose.SINGLE)
    logw = _draw_logw(rng, dist, (m, n))
    return WeightGrid(m, n, logw, dist, seed)


def explicit_grid(values) -> WeightGrid:
    """Wrap given nonnegative values without sampling."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("explicit grid values must be a 2-d matrix")
    if (v < 0).any() or np.isnan(v).any() or np.isinf(v).any():
        raise ValueError("explicit grid values must be finite and >= 0")
    with np.errstate(divide="ignore"):
        logw = np.log(v)
    return WeightGrid(v.shape[0], v.shape[1], logw, DistributionSpec("explicit"))


def sample_logw_block(
    m: int,
    n: int,
    dist: DistributionSpec,
    seed: int,
    block_index: int,
    count: int = BLOCK,
    purpose: int = Purpose.REPLICA,
) -> np.ndarray:
    """Log-weights for replicas [block_index*BLOCK, ...), shape (count, m, n).

    The full block is always drawn so a partial final block sees the same
    values as a full one.
    """
    if not (1 <= count <= BLOCK):
        raise ValueError(f"count must be in 1..{BLOCK}")
    rng = stream(seed, block=block_index, purpose=purpose)
    logw = _draw_logw(rng, dist, (BLOCK, m, n))
    return logw[:count]


def iter_blocks(total: int) -> Iterator[tuple[int, int]]:
    """Yield (block_index, count) pairs covering ``total`` replicas."""
    b = 0
    left = total
    while left > 0:
        c = min(BLOCK, left)
        yield b, c
        b += 1
        left -= c
