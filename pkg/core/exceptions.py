"""Errors raised by the randinf library.

Management commands turn any ``RandInfError`` into a ``CommandError`` so the
process exits nonzero with the message on stderr.
"""
from typing import Optional, Sequence


class RandInfError(Exception):
    """Base class for every error raised by the library."""


class DomainError(RandInfError, ValueError):
    """An argument lies outside the domain of the operation."""


class TiesError(RandInfError):
    """Tied responses inside a block; the null distribution assumes none."""

    def __init__(self, block_id, tied_values: Sequence[float] = ()):
        self.block_id = block_id
        self.tied_values = tuple(tied_values)
        preview = ", ".join(f"{v:.17g}" for v in self.tied_values[:5])
        super().__init__(
            f"Block {block_id!r} has tied responses ({preview}); "
            f"rerun with --jitter <seed> to break ties"
        )


class DegenerateBlockError(RandInfError):
    """A block has no treated or no control units."""

    def __init__(self, block_id, n: int, m: int):
        self.block_id = block_id
        self.n = n
        self.m = m
        super().__init__(f"Block {block_id!r} is degenerate: n={n} treated, m={m} controls")


class DegenerateTrialError(RandInfError):
    """Truncated HRF weights sum to (almost) zero, so the trial cannot be scored."""


class BudgetExceededError(RandInfError):
    """A combinatorial or dynamic-programming computation is too large."""


class ModeMismatchError(RandInfError):
    """Exact and Normal null distributions were mixed."""


class RankDeficiencyError(RandInfError):
    """The covariate design matrix does not have full column rank."""


class QuadratureError(RandInfError):
    """Numerical integration failed to reach the requested accuracy."""


class SchemaError(RandInfError):
    """An input file violates its expected layout."""

    def __init__(self, path, message: str, row: Optional[int] = None, field: Optional[str] = None):
        self.path = str(path)
        self.row = row
        self.field = field
        where = self.path
        if row is not None:
            where += f", row {row}"
        if field is not None:
            where += f", field {field!r}"
        super().__init__(f"{where}: {message}")


class ScenarioConfigError(RandInfError):
    """A simulation scenario file contains invalid keys or values."""

    def __init__(self, path, problems: Sequence[str]):
        self.path = str(path)
        self.problems = list(problems)
        super().__init__(f"{self.path}: invalid scenario configuration: " + "; ".join(self.problems))
