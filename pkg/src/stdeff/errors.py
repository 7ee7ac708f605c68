"""Exception types shared across the package.

Every estimation failure carries a short machine-readable ``code`` so the
simulation harness and the CLI can report exclusion reasons without parsing
messages.
"""

from __future__ import annotations


class EstimationError(Exception):
    """Base class for failures that invalidate an analysis or replicate."""

    code = "estimation-error"


class RankDeficientError(EstimationError):
    """Design matrix is not of full column rank."""

    code = "rank-deficient"


class DegenerateOutcomeError(EstimationError):
    """Outcome carries no information (constant overall or within each arm)."""

    code = "degenerate-outcome"


class EmptyArmError(EstimationError):
    """One of the treatment arms has no observations."""

    code = "empty-arm"


class NonConvergedError(EstimationError):
    """Iterative fit exhausted its iteration budget without converging."""

    code = "non-converged"


class DimensionMismatchError(EstimationError):
    """Input shapes are inconsistent with the model specification."""

    code = "dimension-mismatch"


class LooFailureError(EstimationError):
    """At least one leave-one-out refit failed; the IF-LOO variance is undefined."""

    code = "loo-failure"


class BootstrapDegenerateError(EstimationError):
    """Too many bootstrap resamples failed to produce a usable refit."""

    code = "bootstrap-degenerate"


class NoIncludedReplicatesError(EstimationError):
    """Every replicate of a simulation run was excluded."""

    code = "no-included-replicates"


class ConfigError(Exception):
    """Invalid scenario file or CLI configuration; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParseError(Exception):
    """Malformed input data file; reports the offending row and column."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where += f" (row {row}"
            where += f", column {column!r})" if column is not None else ")"
        elif column is not None:
            where += f" (column {column!r})"
        super().__init__(message + where)


class NonBinaryColumnError(ParseError):
    """A column that must be coded 0/1 contains other values."""
