"""Tests of no effect and attributable-effect bounds under interference.

A_Z = T_Z - T~_Z compares the actual experiment with the uniformity trial
that used the same random assignment. T~_Z is never observed, but its
distribution is known, so Pr(A_Z >= T_Z - t~_alpha) >= 1 - alpha whatever
the form of interference.
"""
import logging
from enum import Enum
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import null_dist
from .exceptions import RandInfError
from .null_dist import Mode
from .placement_stat import (
    TrialRecord,
    WeightScheme,
    apply_weights,
    group_by_block,
    negate,
    statistic,
    summarize,
)

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "k", "direction", "T_obs", "null_mean", "null_sd", "deviate", "p_value",
    "point_estimate", "ci_lower", "alpha", "mode",
]


class Direction(str, Enum):
    ELEVATION = "elevate"
    SUPPRESSION = "suppress"


class InferenceReport(BaseModel):
    """One row of a test-of-no-effect table."""
    model_config = ConfigDict(frozen=True)

    k: int
    T_obs: float
    null_mean: float
    null_var: float = Field(ge=0.0)
    deviate: float
    p_value: float = Field(ge=0.0, le=1.0)
    point_estimate_fraction: float
    ci_lower_fraction: float
    alpha: float
    direction: Direction = Direction.ELEVATION
    mode: Mode
    t_tilde: float
    scheme: WeightScheme = WeightScheme.EQUAL
    num_blocks: int
    dropped_blocks: int = 0
    two_sided: bool = False

    @property
    def null_sd(self) -> float:
        return float(np.sqrt(self.null_var))

    def as_row(self) -> dict:
        return {
            "k": self.k,
            "direction": self.direction.value,
            "T_obs": self.T_obs,
            "null_mean": self.null_mean,
            "null_sd": self.null_sd,
            "deviate": self.deviate,
            "p_value": self.p_value,
            "point_estimate": self.point_estimate_fraction,
            "ci_lower": self.ci_lower_fraction,
            "alpha": self.alpha,
            "mode": self.mode.value,
        }


class LagClass(BaseModel):
    model_config = ConfigDict(frozen=True)

    previous_z: int
    current_z: int


def test_no_effect(trials: Sequence[TrialRecord], k: int, scheme: WeightScheme = WeightScheme.EQUAL,
                   mode: Mode = Mode.AUTO, alpha: float = 0.05, two_sided: bool = False,
                   dropped_blocks: int = 0, budget: int = null_dist.DP_STATE_BUDGET,
                   normal_min_blocks: int = null_dist.NORMAL_MIN_BLOCKS) -> InferenceReport:
    blocks = summarize(trials)
    if not blocks:
        raise RandInfError("No trials to test")
    resolved = null_dist.select_mode(blocks, k, mode, budget, normal_min_blocks)
    weighted = apply_weights(blocks, k, scheme)
    t_obs = statistic(blocks, k, scheme)
    dist = null_dist.uniformity_distribution(weighted, k, resolved, budget)
    critical = null_dist.critical_value(dist, alpha)

    upper = null_dist.upper_tail(dist, t_obs)
    if two_sided:
        p_value = min(1.0, 2.0 * min(upper, null_dist.lower_tail(dist, t_obs)))
    else:
        p_value = upper
    deviate = (t_obs - dist.mean) / dist.sd if dist.variance > 0 else 0.0
    if dist.mean > 0:
        point = (t_obs - dist.mean) / dist.mean
        lower = (t_obs - critical.t_tilde) / dist.mean
    else:
        logger.warning(f"k={k}: null mean is 0, so fractional increases are undefined")
        point = lower = float("nan")

    logger.info(
        f"k={k} mode={resolved.value} blocks={len(blocks)} T={t_obs:.6g} "
        f"E={dist.mean:.6g} deviate={deviate:.4f} p={p_value:.3g}"
    )
    return InferenceReport(
        k=k, T_obs=t_obs, null_mean=dist.mean, null_var=dist.variance,
        deviate=float(deviate), p_value=float(p_value),
        point_estimate_fraction=float(point), ci_lower_fraction=float(lower),
        alpha=alpha, mode=resolved, t_tilde=critical.t_tilde, scheme=scheme,
        num_blocks=len(blocks), dropped_blocks=dropped_blocks, two_sided=two_sided,
    )


def attributable_bound(report: InferenceReport) -> float:
    """1 - alpha lower confidence bound for A_Z."""
    return report.T_obs - report.t_tilde


def test_suppression(trials: Sequence[TrialRecord], k: int, scheme: WeightScheme = WeightScheme.EQUAL,
                     mode: Mode = Mode.AUTO, alpha: float = 0.05, two_sided: bool = False,
                     **limits) -> InferenceReport:
    report = test_no_effect(negate(trials), k, scheme, mode, alpha, two_sided, **limits)
    return report.model_copy(update={"direction": Direction.SUPPRESSION})


def run_test(trials: Sequence[TrialRecord], k: int, direction: Direction = Direction.ELEVATION,
             **options) -> InferenceReport:
    if direction is Direction.SUPPRESSION:
        return test_suppression(trials, k, **options)
    return test_no_effect(trials, k, **options)


def lag_subset(trials: Sequence[TrialRecord], current_z: int = 0):
    """Trials whose current assignment is ``current_z``, relabeled by the previous assignment.

    Returns the relabeled trials and the number of blocks dropped because
    they lack either group after subsetting.
    """
    kept: List[TrialRecord] = []
    dropped = []
    for block_id, members in group_by_block(trials).items():
        relabeled = [
            current.model_copy(update={"z": previous.z})
            for previous, current in zip(members, members[1:])
            if current.z == current_z
        ]
        treated = sum(t.z for t in relabeled)
        if treated == 0 or treated == len(relabeled):
            dropped.append(block_id)
            continue
        kept.extend(relabeled)
    if dropped:
        logger.warning(f"Lag test dropped {len(dropped)} block(s) lacking both lag classes: {dropped[:5]}")
    if not kept:
        raise RandInfError("Every block is degenerate after lag subsetting")
    return kept, len(dropped)


def lagged_interference_test(trials: Sequence[TrialRecord], k: int, scheme: WeightScheme = WeightScheme.EQUAL,
                             mode: Mode = Mode.AUTO, alpha: float = 0.05, two_sided: bool = False,
                             direction: Direction = Direction.ELEVATION, current_z: int = 0,
                             **limits) -> InferenceReport:
    """Compare stop-go with go-go trials (or stop-stop with go-stop for ``current_z=1``).

    Only the previous trial's assignment differs between the two groups, so
    an effect is a lingering effect of the previous trial.
    """
    subset, dropped = lag_subset(trials, current_z)
    if direction is Direction.SUPPRESSION:
        report = test_no_effect(negate(subset), k, scheme, mode, alpha, two_sided, dropped, **limits)
        return report.model_copy(update={"direction": Direction.SUPPRESSION})
    return test_no_effect(subset, k, scheme, mode, alpha, two_sided, dropped, **limits)
