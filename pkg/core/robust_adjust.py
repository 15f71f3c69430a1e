"""Robust covariance adjustment before randomization inference.

Responses are regressed on measured nuisance covariates (head motion, say)
with Huber's M-estimator; the residuals replace the responses. The treatment
indicator never enters the regression.
"""
import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import DomainError, RankDeficiencyError
from .inference import InferenceReport, run_test, Direction
from .null_dist import Mode
from .placement_stat import TrialRecord, WeightScheme, group_by_block
from .trial_scoring import HrfWeights, SessionSeries, TrialEvent, compute_weights, score_trials

logger = logging.getLogger(__name__)

HUBER_TUNING = 1.345
HUBER_TOL = 1e-8
HUBER_MAX_ITER = 50
INTERCEPT = "(intercept)"


class CovariateMatrix(BaseModel):
    """Covariates with one row per trial, in the same order as the trials."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    names: Tuple[str, ...] = Field(min_length=1)
    values: np.ndarray

    @model_validator(mode="after")
    def _check(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError(f"expected a (rows, {len(self.names)}) matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("covariates contain missing or non-finite values")
        return self

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    def take(self, rows) -> "CovariateMatrix":
        return CovariateMatrix(names=self.names, values=self.values[rows])


class RobustFit(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coefficients: Dict[str, float]
    scale: float = Field(ge=0.0)
    iterations: int
    converged: bool
    tuning: float
    residuals: np.ndarray
    weights: np.ndarray
    block_id: Optional[str] = None

    def as_row(self) -> dict:
        return {
            "block_id": self.block_id or "pooled", "iterations": self.iterations, "scale": self.scale,
            "converged": int(self.converged), "tuning": self.tuning,
        }


FIT_COLUMNS = ["block_id", "iterations", "scale", "converged", "tuning"]


def _design(X: CovariateMatrix) -> np.ndarray:
    return sm.add_constant(X.values, has_constant="add")


def huber_fit(y, X: CovariateMatrix, tuning: float = HUBER_TUNING, tol: float = HUBER_TOL,
              max_iter: int = HUBER_MAX_ITER) -> RobustFit:
    """Huber M-estimate by iteratively reweighted least squares.

    The scale is re-estimated every iteration as MAD(residuals) / 0.6745
    and iteration stops once no coefficient moves by tol or more.
    """
    y = np.asarray(y, dtype=float)
    design = _design(X)
    rows, columns = design.shape
    if y.size != rows:
        raise RankDeficiencyError(f"{y.size} responses but {rows} covariate rows")
    if rows <= columns:
        raise RankDeficiencyError(f"{rows} rows cannot support {columns - 1} covariates plus an intercept")
    if np.linalg.matrix_rank(design) < columns:
        raise RankDeficiencyError(f"Covariates {list(X.names)} plus intercept are not of full column rank")
    names = (INTERCEPT,) + X.names

    ols = sm.OLS(y, design).fit()
    if np.max(np.abs(ols.resid)) <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        logger.debug("Exact linear fit; Huber iterations skipped")
        return RobustFit(
            coefficients=dict(zip(names, map(float, ols.params))), scale=0.0, iterations=0,
            converged=True, tuning=tuning, residuals=np.asarray(ols.resid), weights=np.ones(rows),
        )

    model = sm.RLM(y, design, M=sm.robust.norms.HuberT(t=tuning))
    result = model.fit(maxiter=max_iter, tol=tol, scale_est="mad", conv="coefs", update_scale=True)
    history = result.fit_history["params"]
    change = float(np.max(np.abs(np.asarray(history[-1]) - np.asarray(history[-2])))) if len(history) > 1 else np.inf
    converged = change < tol
    iterations = int(result.fit_history["iteration"])
    if not converged:
        logger.warning(f"Huber fit did not converge in {max_iter} iterations (last change {change:.3g})")
    return RobustFit(
        coefficients=dict(zip(names, map(float, result.params))), scale=float(result.scale),
        iterations=iterations, converged=converged, tuning=tuning,
        residuals=np.asarray(result.resid), weights=np.asarray(result.weights),
    )


def residualize(trials: Sequence[TrialRecord], X: CovariateMatrix, per_block: bool = False,
                tuning: float = HUBER_TUNING, tol: float = HUBER_TOL,
                max_iter: int = HUBER_MAX_ITER) -> Tuple[List[TrialRecord], List[RobustFit]]:
    """Replace every response by its Huber residual; rows of X follow ``trials``."""
    trials = list(trials)
    if X.rows != len(trials):
        raise RankDeficiencyError(f"{X.rows} covariate rows for {len(trials)} trials")
    y = np.array([t.response for t in trials])
    residuals = np.empty_like(y)
    fits = []
    if per_block:
        position = {(t.block_id, t.index): i for i, t in enumerate(trials)}
        for block_id, members in group_by_block(trials).items():
            rows = np.array([position[(t.block_id, t.index)] for t in members])
            fit = huber_fit(y[rows], X.take(rows), tuning, tol, max_iter).model_copy(update={"block_id": block_id})
            residuals[rows] = fit.residuals
            fits.append(fit)
    else:
        fit = huber_fit(y, X, tuning, tol, max_iter)
        residuals[:] = fit.residuals
        fits.append(fit)
    logger.info(f"Residualized {len(trials)} trials on {list(X.names)} with {len(fits)} Huber fit(s)")
    adjusted = [t.model_copy(update={"response": float(r)}) for t, r in zip(trials, residuals)]
    return adjusted, fits


def adjusted_inference(trials: Sequence[TrialRecord], X: CovariateMatrix, k: int,
                       scheme: WeightScheme = WeightScheme.EQUAL, mode: Mode = Mode.AUTO,
                       alpha: float = 0.05, per_block: bool = False, tuning: float = HUBER_TUNING,
                       direction: Direction = Direction.ELEVATION,
                       two_sided: bool = False, tol: float = HUBER_TOL, max_iter: int = HUBER_MAX_ITER,
                       **limits) -> InferenceReport:
    adjusted, _ = residualize(trials, X, per_block, tuning, tol, max_iter)
    return run_test(adjusted, k, direction, scheme=scheme, mode=mode, alpha=alpha, two_sided=two_sided, **limits)


def score_scan_covariates(scans: Mapping[str, pd.DataFrame], events: Mapping[str, Sequence[TrialEvent]],
                          sample_interval: float = 2.0,
                          weights: Optional[HrfWeights] = None) -> Tuple[Tuple[str, ...], List[tuple], np.ndarray]:
    """Score per-scan covariates with the HRF window used for responses.

    Returns covariate names, (block_id, trial_index) keys and one row of
    scored covariates per trial.
    """
    weights = weights or compute_weights(sample_interval)
    names: Optional[Tuple[str, ...]] = None
    keys: List[tuple] = []
    rows = []
    for block_id in sorted(events):
        if block_id not in scans:
            raise DomainError(f"No per-scan covariates for block {block_id!r}")
        frame = scans[block_id]
        names = names or tuple(frame.columns)
        columns = []
        for name in names:
            series = SessionSeries(block_id=block_id, values=tuple(frame[name]), sample_interval_seconds=sample_interval)
            columns.append([t.response for t in score_trials(series, events[block_id], weights)])
        block_rows = np.column_stack(columns)
        keys.extend((block_id, i) for i in range(block_rows.shape[0]))
        rows.append(block_rows)
    if names is None:
        raise DomainError("No events to score covariates against")
    return names, keys, np.vstack(rows)
