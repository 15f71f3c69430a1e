"""Synthetic stop-signal sessions for end-to-end runs of the pipeline.

Each block is one session: trials are spaced a few scans apart, a quarter of
them are stop trials, and the recorded series is the HRF-convolved stop
response plus slow drift and AR(1) noise. Six head-motion covariates are
drawn per trial independently of everything else, so adjusting for them
should leave inferences essentially unchanged.
"""
import logging
from typing import Dict, List

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal

from .sim_engine import add_ar_noise
from .trial_scoring import HRF_LENGTH, SAMPLE_INTERVAL, SessionSeries, TrialEvent, compute_weights

logger = logging.getLogger(__name__)

MOTION_COVARIATES = ("trans_x", "trans_y", "trans_z", "rot_x", "rot_y", "rot_z")


class SyntheticConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    blocks: int = Field(default=232, ge=1)
    trials_per_block: int = Field(default=97, ge=4)
    p_stop: float = Field(default=0.25, gt=0.0, lt=1.0)
    effect: float = 1.0
    lag_effect: float = 0.0
    noise_sd: float = Field(default=1.0, ge=0.0)
    ar_rho: float = Field(default=0.3, ge=0.0, lt=1.0)
    drift: float = Field(default=2.0, ge=0.0)
    min_gap: int = Field(default=2, ge=1)
    max_gap: int = Field(default=4, ge=1)
    sample_interval: float = Field(default=SAMPLE_INTERVAL, gt=0.0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_gaps(self):
        if self.max_gap < self.min_gap:
            raise ValueError(f"max_gap {self.max_gap} is below min_gap {self.min_gap}")
        return self


class SyntheticData(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    series: List[SessionSeries]
    events: Dict[str, List[TrialEvent]]
    covariates: pd.DataFrame


def _assignment(rng: np.random.Generator, trials: int, p_stop: float) -> np.ndarray:
    while True:
        z = (rng.random(trials) < p_stop).astype(np.int64)
        if 2 <= z.sum() <= trials - 2:
            return z


def _session(config: SyntheticConfig, block: int, kernel: np.ndarray):
    streams = np.random.SeedSequence(entropy=config.seed, spawn_key=(block,)).spawn(4)
    design_rng, drift_rng, noise_rng, motion_rng = (np.random.default_rng(s) for s in streams)
    block_id = f"s{block:03d}"

    z = _assignment(design_rng, config.trials_per_block, config.p_stop)
    gaps = design_rng.integers(config.min_gap, config.max_gap + 1, size=config.trials_per_block)
    onsets = np.concatenate([[0], np.cumsum(gaps[:-1])])
    scans = int(onsets[-1]) + HRF_LENGTH

    impulses = np.zeros(scans)
    impulses[onsets] += config.effect * z
    after_stop = np.concatenate([[False], z[:-1] == 1])
    impulses[onsets] += config.lag_effect * after_stop
    evoked = signal.lfilter(kernel, [1.0], impulses)

    t = np.linspace(0.0, 1.0, scans)
    phase = drift_rng.uniform(0.0, 2.0 * np.pi)
    drift = config.drift * (drift_rng.normal() * t + np.cos(np.pi * t + phase))
    noise = config.noise_sd * add_ar_noise(np.zeros(scans), config.ar_rho, noise_rng)

    series = SessionSeries(block_id=block_id, values=tuple(evoked + drift + noise),
                           sample_interval_seconds=config.sample_interval)
    events = [TrialEvent(block_id=block_id, onset_index=int(o), z=int(s)) for o, s in zip(onsets, z)]
    motion = pd.DataFrame(motion_rng.standard_normal((config.trials_per_block, len(MOTION_COVARIATES))),
                          columns=list(MOTION_COVARIATES))
    motion.insert(0, "trial_index", np.arange(config.trials_per_block))
    motion.insert(0, "block_id", block_id)
    return series, events, motion


def synthesize(config: SyntheticConfig = SyntheticConfig()) -> SyntheticData:
    kernel = compute_weights(config.sample_interval).as_array()
    kernel = kernel / kernel.max()
    series, events, motion = [], {}, []
    for block in range(config.blocks):
        block_series, block_events, block_motion = _session(config, block, kernel)
        series.append(block_series)
        events[block_series.block_id] = block_events
        motion.append(block_motion)
    logger.info(
        f"Synthesized {config.blocks} sessions of {config.trials_per_block} trials "
        f"(effect={config.effect}, lag_effect={config.lag_effect}, seed={config.seed})"
    )
    return SyntheticData(series=series, events=events, covariates=pd.concat(motion, ignore_index=True))
