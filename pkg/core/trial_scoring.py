"""Scoring trials of an event-related time series with a canonical HRF.

Each trial's response is the HRF-weighted sum of the samples that follow its
onset. Sessions may first be high-pass filtered by regressing out a slow
discrete-cosine drift basis.
"""
import logging
from functools import lru_cache
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats

from .exceptions import DegenerateTrialError, DomainError
from .placement_stat import TrialRecord

logger = logging.getLogger(__name__)

HRF_LENGTH = 17
SAMPLE_INTERVAL = 2.0
HIGHPASS_CUTOFF = 128.0
# Truncated weights summing to less than this cannot be renormalized.
MIN_RENORMALIZER = 1e-9


class SessionSeries(BaseModel):
    """One evenly sampled series for one block (a subject's session)."""
    model_config = ConfigDict(frozen=True)

    block_id: str
    values: Tuple[float, ...] = Field(min_length=1)
    sample_interval_seconds: float = Field(default=SAMPLE_INTERVAL, gt=0)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


class TrialEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_id: str
    onset_index: int = Field(ge=0)
    z: Literal[0, 1]


class HrfWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    weights: Tuple[float, ...]

    @field_validator("weights")
    @classmethod
    def _check(cls, weights):
        if len(weights) != HRF_LENGTH:
            raise ValueError(f"expected {HRF_LENGTH} weights, got {len(weights)}")
        if weights[0] != 0.0:
            raise ValueError("the first weight must be zero")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {sum(weights)!r}, not 1")
        return weights

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def hrf(x):
    """Double-gamma hemodynamic response at ``x`` seconds.

    hrf(x) = g(16x; 6, 1/16) - g(16x; 16, 1/16) / 6 where g(.; shape, rate)
    is the gamma density. Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("hrf() is defined for x >= 0 seconds")
    scaled = 16.0 * x
    value = stats.gamma.pdf(scaled, 6, scale=16.0) - stats.gamma.pdf(scaled, 16, scale=16.0) / 6.0
    return float(value) if value.ndim == 0 else value


@lru_cache(maxsize=8)
def compute_weights(sample_interval: float = SAMPLE_INTERVAL) -> HrfWeights:
    """HRF at the start of each of 17 sampling intervals, normalized to sum 1."""
    raw = hrf(sample_interval * np.arange(HRF_LENGTH))
    weights = raw / raw.sum()
    # absorb the last ulp of rounding so the sum is 1 to machine precision
    weights[int(np.argmax(weights))] += 1.0 - weights.sum()
    return HrfWeights(weights=tuple(float(w) for w in weights))


def score_trials(series: SessionSeries, events: Sequence[TrialEvent],
                 weights: Optional[HrfWeights] = None) -> List[TrialRecord]:
    if weights is None:
        weights = compute_weights(series.sample_interval_seconds)
    values = series.as_array()
    w = weights.as_array()
    records = []
    previous_onset = -1
    for trial_index, event in enumerate(events):
        if event.block_id != series.block_id:
            raise DomainError(f"Event for block {event.block_id!r} scored against block {series.block_id!r}")
        if event.onset_index < previous_onset:
            raise DomainError(f"Events for block {series.block_id!r} are not sorted by onset")
        if event.onset_index >= values.size:
            raise DomainError(
                f"Onset {event.onset_index} is past the end of block {series.block_id!r} "
                f"({values.size} samples)"
            )
        previous_onset = event.onset_index

        window = values[event.onset_index:event.onset_index + w.size]
        if window.size == w.size:
            response = float(np.dot(w, window))
        else:
            truncated = w[:window.size]
            total = truncated.sum()
            if abs(total) <= MIN_RENORMALIZER:
                raise DegenerateTrialError(
                    f"Trial {trial_index} of block {series.block_id!r} at onset {event.onset_index} "
                    f"leaves {window.size} sample(s) whose weights sum to {total:.3g}"
                )
            response = float(np.dot(truncated / total, window))
        records.append(TrialRecord(block_id=series.block_id, index=trial_index, z=event.z, response=response))
    logger.debug(f"Scored {len(records)} trials for block {series.block_id!r}")
    return records


def drift_basis(num_samples: int, sample_interval: float, cutoff_seconds: float) -> np.ndarray:
    """Constant, linear trend and every cosine with period >= cutoff."""
    order = int(np.floor(2.0 * num_samples * sample_interval / cutoff_seconds)) + 1
    t = np.arange(num_samples)
    cosines = np.cos(np.pi * np.outer(2 * t + 1, np.arange(order)) / (2.0 * num_samples))
    trend = np.linspace(-1.0, 1.0, num_samples)
    return np.column_stack([cosines, trend])


def highpass_filter(series: SessionSeries, cutoff_seconds: float = HIGHPASS_CUTOFF) -> SessionSeries:
    values = series.as_array()
    dt = series.sample_interval_seconds
    if values.size < 4:
        raise DomainError(f"Block {series.block_id!r} has {values.size} samples; high-pass needs at least 4")
    if cutoff_seconds <= 2.0 * dt:
        raise DomainError(f"Cutoff {cutoff_seconds}s must exceed twice the sample interval ({2.0 * dt}s)")
    basis = drift_basis(values.size, dt, cutoff_seconds)
    coefficients, *_ = np.linalg.lstsq(basis, values, rcond=None)
    residual = values - basis @ coefficients
    return series.model_copy(update={"values": tuple(float(v) for v in residual)})
