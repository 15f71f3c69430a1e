"""Null distribution of the placement statistic in the uniformity trial.

Under random assignment of n treated among n + m tie-free responses every
arrangement is equally likely, so a block's score distribution depends only
on (n, m, k). Blocks are independent, so the statistic's null distribution is
the convolution of the block distributions; for many blocks it is close to
Normal with the closed-form mean and variance.
"""
import logging
import math
from enum import Enum
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal, stats

from .exceptions import BudgetExceededError, DomainError, ModeMismatchError, RandInfError
from .placement_stat import BlockSummary, binomial_scores

logger = logging.getLogger(__name__)

DP_STATE_BUDGET = 10**8
NORMAL_MIN_BLOCKS = 30
PRUNE_BELOW = 1e-15
# cdf / support comparisons tolerate accumulated rounding of this size
CDF_TOLERANCE = 1e-12


class Mode(str, Enum):
    EXACT = "exact"
    NORMAL = "normal"
    AUTO = "auto"


class NullDistribution(BaseModel):
    """Distribution of the uniformity-trial statistic.

    EXACT distributions carry a strictly increasing support with
    probabilities; NORMAL ones only the two moments.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mode: Mode
    mean: float
    variance: float = Field(ge=0.0)
    support: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None
    pruned_mass: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if self.mode is Mode.AUTO:
            raise ValueError("a distribution is either exact or normal")
        if self.mode is Mode.EXACT:
            if self.support is None or self.probabilities is None:
                raise ValueError("exact distributions need support and probabilities")
            if self.support.shape != self.probabilities.shape or self.support.size == 0:
                raise ValueError("support and probabilities must be nonempty and aligned")
            if np.any(np.diff(self.support) <= 0):
                raise ValueError("support must be strictly increasing")
            if abs(self.probabilities.sum() - 1.0) > 1e-10:
                raise ValueError(f"probabilities sum to {self.probabilities.sum()!r}")
        return self

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probabilities)


class CriticalValue(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(gt=0.0, lt=1.0)
    t_tilde: float


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def exact(support: np.ndarray, probabilities: np.ndarray, pruned_mass: float = 0.0) -> NullDistribution:
    support = np.asarray(support, dtype=float)
    probabilities = np.asarray(probabilities, dtype=float)
    mean = float(np.dot(support, probabilities))
    variance = float(np.dot((support - mean) ** 2, probabilities))
    return NullDistribution(
        mode=Mode.EXACT, mean=mean, variance=max(variance, 0.0),
        support=support, probabilities=probabilities, pruned_mass=pruned_mass,
    )


def normal(mean: float, variance: float) -> NullDistribution:
    return NullDistribution(mode=Mode.NORMAL, mean=float(mean), variance=float(variance))


def block_moments(n: int, m: int, k: int, w: float = 1.0) -> Tuple[float, float]:
    """Null mean and variance of w * sum_j C(U_j, k-1) for one block."""
    if n < 1 or m < 1 or k < 2:
        raise DomainError(f"block_moments needs n >= 1, m >= 1, k >= 2; got n={n}, m={m}, k={k}")
    scores = w * np.asarray(binomial_scores(m, k), dtype=float)
    phi_bar = scores.sum() / (m + 1)
    mean = n * phi_bar
    spread = np.dot(scores, scores) - (m + 1) * phi_bar ** 2
    variance = n * (n + m + 1) / ((m + 1) * (m + 2)) * spread
    return float(mean), float(max(variance, 0.0))


def total_moments(blocks: Sequence[Tuple[int, int, float]], k: int) -> Tuple[float, float]:
    if not blocks:
        raise RandInfError("total_moments() needs at least one block")
    mean = 0.0
    variance = 0.0
    for n, m, w in blocks:
        block_mean, block_variance = block_moments(n, m, k, w)
        mean += block_mean
        variance += block_variance
    return mean, variance


def dp_states(n: int, m: int, k: int) -> int:
    """Size of the (treated, controls, score) state space of the exact DP."""
    return (n + 1) * (m + 1) * (n * math.comb(m, k - 1) + 1)


@lru_cache(maxsize=128)
def _integer_pmf(n: int, m: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Exact pmf of sum_j C(U_j, k-1) with integer support.

    Ranks are visited from smallest to largest; layer[i, s] counts the
    arrangements of the ranks seen so far that used i treated units and
    accumulated score s. A treated unit placed after j controls scores
    C(j, k-1).
    """
    scores = [math.comb(j, k - 1) for j in range(m + 1)]
    max_score = n * scores[m]
    layer = np.zeros((n + 1, max_score + 1))
    layer[0, 0] = 1.0
    for t in range(n + m):
        following = np.zeros_like(layer)
        for i in range(max(0, t - m), min(t, n) + 1):
            j = t - i
            if j < m:
                following[i] += layer[i]
            if i < n:
                s = scores[j]
                following[i + 1, s:] += layer[i, :max_score + 1 - s]
        layer = following
    counts = layer[n]
    nonzero = np.flatnonzero(counts)
    probabilities = counts[nonzero] / math.comb(n + m, n)
    support = nonzero.astype(float)
    support.setflags(write=False)
    probabilities.setflags(write=False)
    return support, probabilities


def block_exact_pmf(n: int, m: int, k: int, w: float = 1.0,
                    budget: int = DP_STATE_BUDGET) -> NullDistribution:
    if n < 1 or m < 1 or k < 2:
        raise DomainError(f"block_exact_pmf needs n >= 1, m >= 1, k >= 2; got n={n}, m={m}, k={k}")
    if m < k - 1 or w == 0.0:
        return exact(np.array([0.0]), np.array([1.0]))
    states = dp_states(n, m, k)
    if states > budget:
        raise BudgetExceededError(
            f"Exact null for n={n}, m={m}, k={k} needs {states} DP states (budget {budget}); "
            f"use --mode normal"
        )
    support, probabilities = _integer_pmf(n, m, k)
    return exact(support * w, probabilities.copy())


def _on_integer_lattice(dist: NullDistribution) -> bool:
    return bool(np.all(dist.support == np.round(dist.support)))


def _prune(support: np.ndarray, probabilities: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    probabilities = np.clip(probabilities, 0.0, None)
    keep = probabilities >= PRUNE_BELOW
    removed = float(probabilities[~keep].sum())
    support = support[keep]
    probabilities = probabilities[keep]
    return support, probabilities / probabilities.sum(), removed


def _convolve_pair(left: NullDistribution, right: NullDistribution) -> Tuple[np.ndarray, np.ndarray]:
    if _on_integer_lattice(left) and _on_integer_lattice(right):
        lo_left, lo_right = int(left.support[0]), int(right.support[0])
        dense_left = np.zeros(int(left.support[-1]) - lo_left + 1)
        dense_left[left.support.astype(np.int64) - lo_left] = left.probabilities
        dense_right = np.zeros(int(right.support[-1]) - lo_right + 1)
        dense_right[right.support.astype(np.int64) - lo_right] = right.probabilities
        dense = signal.convolve(dense_left, dense_right, method="auto")
        support = np.arange(dense.size, dtype=float) + lo_left + lo_right
        return support, dense
    sums = np.add.outer(left.support, right.support).ravel()
    products = np.multiply.outer(left.probabilities, right.probabilities).ravel()
    scale = max(1.0, float(np.max(np.abs(sums))))
    keys = np.round(sums / scale, 12)
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=products)
    return sums[first], merged


def convolve(blocks: Iterable[NullDistribution]) -> NullDistribution:
    """Distribution of the sum of independent block statistics, folded left."""
    blocks = list(blocks)
    if not blocks:
        raise RandInfError("convolve() needs at least one distribution")
    if any(b.mode is not Mode.EXACT for b in blocks):
        raise ModeMismatchError("convolve() accepts exact distributions only")
    result = blocks[0]
    pruned = result.pruned_mass
    for block in blocks[1:]:
        support, probabilities = _convolve_pair(result, block)
        support, probabilities, removed = _prune(support, probabilities)
        pruned += removed + block.pruned_mass
        result = exact(support, probabilities, pruned)
    if pruned:
        logger.debug(f"Convolution pruned {pruned:.3g} probability mass below {PRUNE_BELOW}")
    return result


def critical_value(dist: NullDistribution, alpha: float) -> CriticalValue:
    """Smallest t with Pr(T <= t) >= 1 - alpha (Normal: the matching quantile)."""
    _check_alpha(alpha)
    if dist.mode is Mode.EXACT:
        index = int(np.searchsorted(dist.cdf(), 1.0 - alpha - CDF_TOLERANCE, side="left"))
        index = min(index, dist.support.size - 1)
        return CriticalValue(alpha=alpha, t_tilde=float(dist.support[index]))
    if dist.variance <= 0.0:
        raise DomainError("Normal critical value needs a positive null variance")
    return CriticalValue(alpha=alpha, t_tilde=dist.mean + float(stats.norm.ppf(1.0 - alpha)) * dist.sd)


def _tolerance(t: float) -> float:
    return 1e-9 * max(1.0, abs(t))


def upper_tail(dist: NullDistribution, t: float) -> float:
    """Pr(T >= t)."""
    if dist.mode is Mode.EXACT:
        return float(min(1.0, dist.probabilities[dist.support >= t - _tolerance(t)].sum()))
    if dist.variance <= 0.0:
        return 1.0 if t <= dist.mean else 0.0
    return float(stats.norm.sf((t - dist.mean) / dist.sd))


def lower_tail(dist: NullDistribution, t: float) -> float:
    """Pr(T <= t)."""
    if dist.mode is Mode.EXACT:
        return float(min(1.0, dist.probabilities[dist.support <= t + _tolerance(t)].sum()))
    if dist.variance <= 0.0:
        return 1.0 if t >= dist.mean else 0.0
    return float(stats.norm.cdf((t - dist.mean) / dist.sd))


def select_mode(blocks: Sequence[BlockSummary], k: int, requested: Mode = Mode.AUTO,
                budget: int = DP_STATE_BUDGET, normal_min_blocks: int = NORMAL_MIN_BLOCKS) -> Mode:
    if requested is not Mode.AUTO:
        return requested
    if len(blocks) >= normal_min_blocks:
        return Mode.NORMAL
    if any(dp_states(b.n, b.m, k) > budget for b in blocks):
        return Mode.NORMAL
    return Mode.EXACT


def uniformity_distribution(blocks: Sequence[BlockSummary], k: int, mode: Mode,
                            budget: int = DP_STATE_BUDGET) -> NullDistribution:
    """Null distribution of T for these block shapes and weights."""
    ordered = sorted(blocks, key=lambda b: b.block_id)
    if mode is Mode.NORMAL:
        return normal(*total_moments([(b.n, b.m, b.weight) for b in ordered], k))
    if mode is not Mode.EXACT:
        raise DomainError("uniformity_distribution() needs a resolved mode")
    return convolve(block_exact_pmf(b.n, b.m, k, b.weight, budget) for b in ordered)
