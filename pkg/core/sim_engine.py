"""Monte Carlo size and power of placement tests under interference.

Each replication of a scenario draws a completely randomized assignment,
marks a fraction of treated trials as successful, lets the chosen kind of
interference decide which successes show up, draws responses from F or from
the distribution of the maximum of nu draws from F, optionally adds AR(1)
noise, and runs every requested test at level alpha, one-sided unless the scenario
asks for two-sided tests.

Random streams: replication r of a scenario with seed s uses
SeedSequence(entropy=s, spawn_key=(r,)), whose five children feed, in order,
the assignment, success flags, responses, AR noise and permutation
resampling. Results therefore do not depend on how replications are spread
over threads.
"""
import configparser
import logging
import math
import warnings
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy import integrate, signal, stats

from . import null_dist
from .exceptions import DegenerateBlockError, DomainError, QuadratureError, ScenarioConfigError
from .placement_stat import placement_counts, score_sum

logger = logging.getLogger(__name__)

STREAMS = ("assignment", "success", "response", "noise", "permutation")


class Family(str, Enum):
    NORMAL = "normal"
    T2 = "t2"


class Interference(str, Enum):
    NONE = "none"
    A = "a"
    B = "b"
    C = "c"
    D = "d"


class TestName(str, Enum):
    TTEST = "ttest"
    K2 = "k2"
    K5 = "k5"
    K10 = "k10"

    @property
    def k(self) -> Optional[int]:
        return None if self is TestName.TTEST else int(self.value[1:])


class TTestKind(str, Enum):
    CONVENTIONAL = "conventional"
    PERMUTATION = "permutation"


class ArScale(str, Enum):
    """Which variance of the AR(1) errors is one: the marginal or the innovation."""
    MARGINAL = "marginal"
    INNOVATION = "innovation"


class SimScenario(BaseModel):
    """Everything needed to simulate one cell of a power table."""
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    id: str
    N: int = Field(ge=4)
    p_treat: float = Field(default=0.5, gt=0.0, lt=1.0)
    lambda_: float = Field(alias="lambda", ge=0.0, le=1.0)
    nu: int = Field(ge=1)
    F: Family = Family.NORMAL
    interference: Interference = Interference.NONE
    ar_noise: bool = False
    ar_rho: float = Field(default=0.5, ge=0.0, lt=1.0)
    ar_scale: ArScale = ArScale.MARGINAL
    tests: Tuple[TestName, ...] = tuple(TestName)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    two_sided: bool = False
    replications: int = Field(default=5000, ge=1)
    seed: int = Field(ge=0, lt=2**64)
    t_test: TTestKind = TTestKind.CONVENTIONAL
    permutations: int = Field(default=999, ge=1)

    @field_validator("F", "interference", "t_test", "ar_scale", mode="before")
    @classmethod
    def _lower(cls, value):
        return value.strip().lower() if isinstance(value, str) else value

    @field_validator("tests", mode="before")
    @classmethod
    def _split(cls, value):
        if isinstance(value, str):
            return tuple(part.strip().lower() for part in value.split(",") if part.strip())
        return value


class PowerRow(BaseModel):
    """Rejection rates of each test in one scenario."""
    model_config = ConfigDict(frozen=True)

    scenario: SimScenario
    rates: Dict[TestName, float]
    standard_errors: Dict[TestName, float]
    redraws: int = 0

    def as_rows(self) -> List[dict]:
        s = self.scenario
        return [
            {
                "scenario": s.id, "F": s.F.value, "interference": s.interference.value.upper(),
                "nu": s.nu, "lambda": s.lambda_, "N": s.N, "ar": int(s.ar_noise),
                "test": test.value, "rejection_rate": self.rates[test], "se": self.standard_errors[test],
                "replications": s.replications, "seed": s.seed,
            }
            for test in s.tests
        ]


POWER_COLUMNS = [
    "scenario", "F", "interference", "nu", "lambda", "N", "ar", "test",
    "rejection_rate", "se", "replications", "seed",
]


def _draw(family: Family, rng: np.random.Generator, size) -> np.ndarray:
    if family is Family.NORMAL:
        return rng.standard_normal(size)
    return rng.standard_t(2, size)


def draw_response(family: Family, nu: int, successful: bool, rng: np.random.Generator) -> float:
    """One response: the maximum of nu draws from F if successful, else one draw."""
    if nu < 1:
        raise DomainError(f"nu must be at least 1, got {nu}")
    return float(_draw(family, rng, nu if successful else 1).max())


def draw_responses(family: Family, nu: int, successful: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if nu < 1:
        raise DomainError(f"nu must be at least 1, got {nu}")
    successful = np.asarray(successful, dtype=bool)
    responses = _draw(family, rng, successful.size)
    count = int(successful.sum())
    if count and nu > 1:
        responses[successful] = _draw(family, rng, (count, nu)).max(axis=1)
    return responses


def _previous(z: np.ndarray, lag: int) -> np.ndarray:
    """Assignment ``lag`` trials back; -1 where there is no such trial."""
    shifted = np.full(z.size, -1, dtype=np.int64)
    if lag < z.size:
        shifted[lag:] = z[:z.size - lag]
    return shifted


def apply_interference(z, success_flags, interference: Interference) -> np.ndarray:
    """Which successful treated trials actually respond under the interference pattern."""
    z = np.asarray(z, dtype=np.int64)
    effective = np.asarray(success_flags, dtype=bool) & (z == 1)
    if interference is Interference.NONE:
        return effective
    if interference is Interference.A:
        return effective & (_previous(z, 1) == 0)
    if interference is Interference.B:
        return effective & (_previous(z, 1) == 1)
    lags = 2 if interference is Interference.C else 3
    for lag in range(1, lags + 1):
        effective &= _previous(z, lag) == 0
    return effective


def add_ar_noise(responses, rho: float, rng: np.random.Generator,
                 scale: ArScale = ArScale.MARGINAL) -> np.ndarray:
    """Add AR(1) errors with lag-one correlation rho.

    With MARGINAL scaling the errors are stationary with unit variance. With
    INNOVATION scaling each innovation is standard Normal, the first error
    included, so the variance climbs from 1 towards 1 / (1 - rho**2).
    """
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    responses = np.asarray(responses, dtype=float)
    innovations = rng.standard_normal(responses.size)
    if scale is ArScale.MARGINAL:
        innovations[1:] *= math.sqrt(1.0 - rho ** 2)
    return responses + signal.lfilter([1.0], [1.0, -rho], innovations)


def _groups(responses, z) -> Tuple[np.ndarray, np.ndarray]:
    responses = np.asarray(responses, dtype=float)
    z = np.asarray(z)
    treated, control = responses[z == 1], responses[z == 0]
    if treated.size < 2 or control.size < 2:
        raise DegenerateBlockError("t-test", int(treated.size), int(control.size))
    return treated, control


def _alternative(two_sided: bool) -> str:
    return "two-sided" if two_sided else "greater"


def pooled_t_test(responses, z, alpha: float = 0.05, two_sided: bool = False) -> Tuple[float, bool]:
    """Pooled-variance two-sample t against t on N - 2 df, one-sided (treated > control) by default."""
    treated, control = _groups(responses, z)
    result = stats.ttest_ind(treated, control, equal_var=True, alternative=_alternative(two_sided))
    return float(result.statistic), bool(result.pvalue <= alpha)


def _t_statistic(x, y, axis=-1):
    return stats.ttest_ind(x, y, equal_var=True, axis=axis).statistic


def permutation_t_test(responses, z, alpha: float = 0.05, n_resamples: int = 999,
                       rng: Optional[np.random.Generator] = None, two_sided: bool = False) -> Tuple[float, bool]:
    """Pooled t referred to its permutation distribution instead of Student's t."""
    treated, control = _groups(responses, z)
    result = stats.permutation_test(
        (treated, control), _t_statistic, permutation_type="independent", vectorized=True,
        n_resamples=n_resamples, alternative=_alternative(two_sided), rng=rng,
    )
    return float(result.statistic), bool(result.pvalue <= alpha)


def placement_test(responses, z, k: int, alpha: float = 0.05, two_sided: bool = False) -> Tuple[float, bool]:
    """One-block placement test with the Normal null."""
    z = np.asarray(z)
    counts = placement_counts(responses, z, "simulated")
    n = int(counts.size)
    m = int(z.size - n)
    t_obs = float(score_sum(counts, m, k))
    dist = null_dist.normal(*null_dist.block_moments(n, m, k))
    p_value = null_dist.upper_tail(dist, t_obs)
    if two_sided:
        p_value = min(1.0, 2.0 * min(p_value, null_dist.lower_tail(dist, t_obs)))
    return t_obs, p_value <= alpha


def replication_streams(seed: int, replication: int) -> Dict[str, np.random.Generator]:
    root = np.random.SeedSequence(entropy=seed, spawn_key=(replication,))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, root.spawn(len(STREAMS)))}


def draw_assignment(n_trials: int, p_treat: float, rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    """Bernoulli assignment, redrawn until each group has at least two trials."""
    redraws = 0
    while True:
        z = (rng.random(n_trials) < p_treat).astype(np.int64)
        treated = int(z.sum())
        if 2 <= treated <= n_trials - 2:
            return z, redraws
        redraws += 1


def run_replication(s: SimScenario, replication: int) -> Tuple[Dict[TestName, bool], int]:
    rngs = replication_streams(s.seed, replication)
    z, redraws = draw_assignment(s.N, s.p_treat, rngs["assignment"])
    success = rngs["success"].random(s.N) < s.lambda_
    effective = apply_interference(z, success, s.interference)
    responses = draw_responses(s.F, s.nu, effective, rngs["response"])
    if s.ar_noise:
        responses = add_ar_noise(responses, s.ar_rho, rngs["noise"], s.ar_scale)

    outcome = {}
    for test in s.tests:
        if test is TestName.TTEST:
            if s.t_test is TTestKind.PERMUTATION:
                _, reject = permutation_t_test(responses, z, s.alpha, s.permutations, rngs["permutation"],
                                               s.two_sided)
            else:
                _, reject = pooled_t_test(responses, z, s.alpha, s.two_sided)
        else:
            _, reject = placement_test(responses, z, test.k, s.alpha, s.two_sided)
        outcome[test] = reject
    return outcome, redraws


def run_scenario(s: SimScenario, threads: int = 1) -> PowerRow:
    outcomes = Parallel(n_jobs=threads, backend="threading")(
        delayed(run_replication)(s, r) for r in range(s.replications)
    )

    rejections = {test: 0 for test in s.tests}
    redraws = 0
    for outcome, extra in outcomes:
        redraws += extra
        for test, reject in outcome.items():
            rejections[test] += int(reject)
    rates = {test: count / s.replications for test, count in rejections.items()}
    errors = {test: math.sqrt(p * (1.0 - p) / s.replications) for test, p in rates.items()}
    if redraws:
        logger.info(f"Scenario {s.id}: {redraws} degenerate assignment(s) redrawn")
    logger.info(f"Scenario {s.id}: " + ", ".join(f"{t.value}={p:.4f}" for t, p in rates.items()))
    return PowerRow(scenario=s, rates=rates, standard_errors=errors, redraws=redraws)


def _family_distribution(family: Family):
    return stats.norm() if family is Family.NORMAL else stats.t(2)


def limit_probability(delta: float, k: int, family: Family) -> Tuple[float, float]:
    """Probability that a treated response shifted by delta beats k - 1 controls.

    Returns the probability and its percentage increase over the chance
    level 1/k.
    """
    if k < 2:
        raise DomainError(f"k must be at least 2, got {k}")
    chance = 1.0 / k
    if delta == 0:
        return chance, 0.0
    dist = _family_distribution(family)

    def integrand(x):
        return dist.pdf(x - delta) * dist.cdf(x) ** (k - 1)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            probability, error = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-10, epsrel=1e-10, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"delta={delta}, k={k}, F={family.value}: {exc}") from exc
    if error >= 1e-6:
        raise QuadratureError(f"delta={delta}, k={k}, F={family.value}: error estimate {error:.2g}")
    return float(probability), float(100.0 * (probability - chance) / chance)


def _parser(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ScenarioConfigError(path, ["file not found"])
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ScenarioConfigError(path, [str(exc)]) from exc
    return parser


def load_scenarios(path) -> List[SimScenario]:
    """Read an INI file with one section per scenario; [DEFAULT] holds shared keys."""
    parser = _parser(path)
    scenarios = []
    problems = []
    for section in parser.sections():
        raw = dict(parser[section])
        raw.setdefault("id", section)
        try:
            scenarios.append(SimScenario.model_validate(raw))
        except ValidationError as exc:
            for error in exc.errors():
                location = ".".join(str(part) for part in error["loc"])
                problems.append(f"[{section}] {location}: {error['msg']}")
    if not scenarios and not problems:
        problems.append("no scenario sections")
    if problems:
        raise ScenarioConfigError(path, problems)
    return scenarios


class LimitGrid(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    deltas: Tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    k: Tuple[int, ...] = (2, 5, 10)
    families: Tuple[Family, ...] = (Family.NORMAL, Family.T2)

    @field_validator("deltas", "k", "families", mode="before")
    @classmethod
    def _split(cls, value):
        if isinstance(value, str):
            return tuple(part.strip().lower() for part in value.split(",") if part.strip())
        return value


def load_limit_grid(path) -> LimitGrid:
    parser = _parser(path)
    if not parser.has_section("limits"):
        raise ScenarioConfigError(path, ["missing [limits] section"])
    try:
        return LimitGrid.model_validate(dict(parser["limits"]))
    except ValidationError as exc:
        raise ScenarioConfigError(
            path, [f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()]
        ) from exc


def limit_table(grid: LimitGrid) -> List[dict]:
    rows = []
    for family in grid.families:
        for delta in grid.deltas:
            for k in grid.k:
                probability, increase = limit_probability(delta, k, family)
                rows.append({"F": family.value, "delta": delta, "k": k,
                             "probability": probability, "pct_increase": increase})
    return rows


class CoverageResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    replications: int
    covered: int
    coverage: float
    rejections: int
    mean_attributable: float
    t_tilde: float
    mode: null_dist.Mode


def coverage_study(blocks: int = 10, trials_per_block: int = 40, treated_per_block: int = 20, k: int = 2,
                   alpha: float = 0.05, shift: float = 0.0, interference: Interference = Interference.A,
                   replications: int = 1000, seed: int = 0,
                   mode: null_dist.Mode = null_dist.Mode.EXACT) -> CoverageResult:
    """Simulate the actual trial alongside its uniformity trial.

    The uniformity responses are drawn once and then held fixed; each
    replication re-randomizes the assignment within blocks. In the actual
    trial a treated unit whose predecessor matches the interference pattern
    is shifted by ``shift`` and a control following a treated unit by half
    of it, so effects spill over between units. A replication is covered
    when the attributable effect T - T~ is at least T - t~_alpha.
    """
    if not 0 < treated_per_block < trials_per_block:
        raise DomainError("each block needs treated and control trials")
    root = np.random.SeedSequence(entropy=seed)
    fixed_rng, assign_rng = (np.random.default_rng(c) for c in root.spawn(2))
    uniformity = fixed_rng.standard_normal((blocks, trials_per_block))
    base = np.zeros(trials_per_block, dtype=np.int64)
    base[:treated_per_block] = 1

    m = trials_per_block - treated_per_block
    shapes = [(treated_per_block, m, 1.0)] * blocks
    if mode is null_dist.Mode.EXACT:
        dist = null_dist.convolve([null_dist.block_exact_pmf(treated_per_block, m, k)] * blocks)
    else:
        dist = null_dist.normal(*null_dist.total_moments(shapes, k))
    t_tilde = null_dist.critical_value(dist, alpha).t_tilde

    covered = rejections = 0
    attributable = 0.0
    for _ in range(replications):
        t_actual = t_uniform = 0.0
        for b in range(blocks):
            z = assign_rng.permutation(base)
            responses = uniformity[b].copy()
            if shift:
                lifted = apply_interference(z, np.ones(z.size, dtype=bool), interference)
                responses[lifted] += shift
                spill = (z == 0) & (_previous(z, 1) == 1)
                responses[spill] += shift / 2.0
            t_actual += score_sum(placement_counts(responses, z), m, k)
            t_uniform += score_sum(placement_counts(uniformity[b], z), m, k)
        attributable += t_actual - t_uniform
        covered += int(t_actual - t_uniform >= t_actual - t_tilde)
        rejections += int(null_dist.upper_tail(dist, t_actual) <= alpha)
    return CoverageResult(
        replications=replications, covered=covered, coverage=covered / replications,
        rejections=rejections, mean_attributable=attributable / replications,
        t_tilde=t_tilde, mode=mode,
    )
