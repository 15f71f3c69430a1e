"""Placement statistics for blocked randomized experiments.

For a treated unit, its placement is the number of controls in the same
block whose response is less than or equal to its own. The statistic

    T_Z = sum_b w_b sum_j C(placement_bj, k - 1)

counts, with block weights, the sets of one treated unit and k - 1 controls
in which the treated unit has the largest response. With k = 2, one block
and unit weight it is the Mann-Whitney U count.
"""
import itertools
import logging
import math
from collections import defaultdict
from enum import Enum
from functools import lru_cache
from typing import Dict, Iterable, List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import BudgetExceededError, DegenerateBlockError, DomainError, RandInfError, TiesError

logger = logging.getLogger(__name__)

INT64_MAX = np.iinfo(np.int64).max
SUBSET_ORACLE_LIMIT = 10**6
JITTER_SCALE = 1e-9


class WeightScheme(str, Enum):
    EQUAL = "equal"
    BALANCED = "balanced"


class TrialRecord(BaseModel):
    """One experimental unit: a trial in a session."""
    model_config = ConfigDict(frozen=True)

    block_id: str
    index: int = Field(ge=0)
    z: Literal[0, 1]
    response: float


class BlockSummary(BaseModel):
    """Counts, weight and treated placements for one block."""
    model_config = ConfigDict(frozen=True)

    block_id: str
    n: int = Field(ge=1)
    m: int = Field(ge=0)
    weight: float = Field(default=1.0, ge=0.0)
    placements: Tuple[int, ...]

    @model_validator(mode="after")
    def _check_placements(self):
        if len(self.placements) != self.n:
            raise ValueError(f"expected {self.n} placements, got {len(self.placements)}")
        if any(u < 0 or u > self.m for u in self.placements):
            raise ValueError(f"placements must lie in [0, {self.m}]")
        return self


def group_by_block(trials: Iterable[TrialRecord]) -> Dict[str, List[TrialRecord]]:
    """Group trials by block, each block ordered by within-block index."""
    blocks: Dict[str, List[TrialRecord]] = defaultdict(list)
    for trial in trials:
        blocks[trial.block_id].append(trial)
    grouped = {}
    for block_id in sorted(blocks):
        members = sorted(blocks[block_id], key=lambda t: t.index)
        indices = [t.index for t in members]
        if len(set(indices)) != len(indices):
            raise DomainError(f"Block {block_id!r} repeats a trial index")
        grouped[block_id] = members
    return grouped


def placement_counts(responses: np.ndarray, z: np.ndarray, block_id: str = "") -> np.ndarray:
    """Placements of the treated units given block responses and assignments.

    Works on plain arrays so the simulation engine can share it.
    """
    responses = np.asarray(responses, dtype=float)
    z = np.asarray(z)
    treated = responses[z == 1]
    controls = np.sort(responses[z == 0])
    if treated.size == 0 or controls.size == 0:
        raise DegenerateBlockError(block_id, int(treated.size), int(controls.size))
    ordered = np.sort(responses)
    tied = ordered[1:] == ordered[:-1]
    if tied.any():
        raise TiesError(block_id, np.unique(ordered[1:][tied]))
    return np.searchsorted(controls, treated, side="right")


def placements(block_trials: Sequence[TrialRecord]) -> BlockSummary:
    if not block_trials:
        raise DomainError("placements() needs at least one trial")
    block_ids = {t.block_id for t in block_trials}
    if len(block_ids) != 1:
        raise DomainError(f"placements() expects one block, got {sorted(block_ids)}")
    block_id = block_ids.pop()
    responses = np.array([t.response for t in block_trials], dtype=float)
    z = np.array([t.z for t in block_trials])
    counts = placement_counts(responses, z, block_id)
    return BlockSummary(
        block_id=block_id,
        n=int(counts.size),
        m=int((z == 0).sum()),
        placements=tuple(int(u) for u in counts),
    )


@lru_cache(maxsize=256)
def binomial_scores(m: int, k: int) -> np.ndarray:
    """C(j, k-1) for j = 0..m, as int64 when it fits, float64 otherwise."""
    if k < 2:
        raise DomainError(f"k must be at least 2, got {k}")
    exact = [math.comb(j, k - 1) for j in range(m + 1)]
    if exact[-1] <= INT64_MAX:
        table = np.array(exact, dtype=np.int64)
    else:
        logger.debug(f"C({m}, {k - 1}) overflows int64; scoring in floating point")
        table = np.array([float(c) for c in exact])
    table.setflags(write=False)
    return table


def phi(u_count: int, k: int, w: float = 1.0) -> float:
    if k < 2:
        raise DomainError(f"k must be at least 2, got {k}")
    if u_count < 0:
        raise DomainError(f"placement count must be nonnegative, got {u_count}")
    return w * math.comb(u_count, k - 1)


def score_sum(counts: np.ndarray, m: int, k: int):
    """Sum of C(u, k-1) over placement counts, exact while int64 can hold it."""
    table = binomial_scores(m, k)
    if table.dtype == np.int64 and int(table[-1]) * len(counts) <= INT64_MAX:
        return int(table[np.asarray(counts, dtype=np.intp)].sum())
    return float(np.asarray(table, dtype=float)[np.asarray(counts, dtype=np.intp)].sum())


def block_weight(n: int, m: int, k: int, scheme: WeightScheme, num_blocks: int) -> float:
    if scheme is WeightScheme.EQUAL:
        return 1.0
    sets = n * math.comb(m, k - 1)
    if sets == 0:
        return 0.0
    return 1.0 / (num_blocks * sets)


def apply_weights(blocks: Sequence[BlockSummary], k: int, scheme: WeightScheme) -> List[BlockSummary]:
    num_blocks = len(blocks)
    return [
        block.model_copy(update={"weight": block_weight(block.n, block.m, k, scheme, num_blocks)})
        for block in blocks
    ]


def check_k(blocks: Sequence[BlockSummary], k: int) -> None:
    """Warn about blocks too small for k; they stay in with score 0."""
    if k < 2:
        raise DomainError(f"k must be at least 2, got {k}")
    short = [b.block_id for b in blocks if b.m < k - 1]
    if short:
        logger.warning(
            f"k={k} exceeds min m_b + 1; {len(short)} block(s) with m_b < {k - 1} "
            f"score 0: {short[:5]}"
        )


def statistic(blocks: Sequence[BlockSummary], k: int, scheme: WeightScheme = WeightScheme.EQUAL) -> float:
    if not blocks:
        raise RandInfError("statistic() needs at least one block")
    check_k(blocks, k)
    weighted = apply_weights(sorted(blocks, key=lambda b: b.block_id), k, scheme)
    total = 0.0
    for block in weighted:
        total += block.weight * score_sum(np.asarray(block.placements), block.m, k)
    return float(total)


def statistic_by_subsets(block_trials: Sequence[TrialRecord], k: int,
                         scheme: WeightScheme = WeightScheme.EQUAL) -> float:
    """Reference T_Z by enumerating every 1-treated, (k-1)-control set."""
    grouped = group_by_block(block_trials)
    total = 0.0
    for block_id, members in grouped.items():
        treated = [t.response for t in members if t.z == 1]
        controls = [t.response for t in members if t.z == 0]
        if not treated or not controls:
            raise DegenerateBlockError(block_id, len(treated), len(controls))
        sets = len(treated) * math.comb(len(controls), k - 1)
        if sets > SUBSET_ORACLE_LIMIT:
            raise BudgetExceededError(f"Block {block_id!r} has {sets} subsets; oracle limit is {SUBSET_ORACLE_LIMIT}")
        wins = 0
        for r in treated:
            for others in itertools.combinations(controls, k - 1):
                if all(r > c for c in others):
                    wins += 1
        total += block_weight(len(treated), len(controls), k, scheme, len(grouped)) * wins
    return float(total)


def summarize(trials: Iterable[TrialRecord]) -> List[BlockSummary]:
    """Placements for every block, in block_id order."""
    return [placements(members) for members in group_by_block(trials).values()]


def negate(trials: Iterable[TrialRecord]) -> List[TrialRecord]:
    return [t.model_copy(update={"response": -t.response}) for t in trials]


def jitter_ties(trials: Sequence[TrialRecord], seed: int) -> Tuple[List[TrialRecord], int]:
    """Break within-block ties with tiny uniform noise.

    Only responses that take part in a tie move, each by at most
    JITTER_SCALE times max(1, |response|).
    """
    rng = np.random.default_rng(seed)
    jittered: List[TrialRecord] = []
    moved = 0
    for block_id, members in group_by_block(trials).items():
        values = np.array([t.response for t in members])
        uniq, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
        tied = counts[inverse] > 1
        noise = rng.uniform(-0.5, 0.5, size=values.size) * JITTER_SCALE * np.maximum(1.0, np.abs(values))
        values = np.where(tied, values + noise, values)
        moved += int(tied.sum())
        jittered.extend(t.model_copy(update={"response": float(v)}) for t, v in zip(members, values))
    if moved:
        logger.warning(f"Jittered {moved} tied response(s) with seed {seed}")
    return jittered, moved
