"""Exception taxonomy shared across the toolkit.

Every error class carries a ``category`` used to prefix CLI messages and an
``exit_code`` so the command-line front end maps each failure class to one
documented nonzero code.
"""


class TatesensError(Exception):
    """Base class for all toolkit errors."""

    category = "internal"
    exit_code = 1


class ConfigError(TatesensError):
    """Malformed or inconsistent run configuration."""

    category = "config"
    exit_code = 2


class DataError(TatesensError):
    """Input data fails ingestion or role validation."""

    category = "data"
    exit_code = 3


class DesignError(TatesensError):
    """Model specification cannot be realized (unknown columns, rank deficiency,
    unknown coefficient names)."""

    category = "design"
    exit_code = 4


class FitError(TatesensError):
    """Numerical fitting failed (singular systems, non-convergence)."""

    category = "fit"
    exit_code = 5


class SeparationError(FitError):
    """Complete separation: the binomial likelihood has no finite maximizer."""

    category = "fit"
    exit_code = 5


class CoverageError(TatesensError):
    """Target-population effect-modifier support is not covered by the trial
    (assumption A3 violation) or required support information is missing."""

    category = "coverage"
    exit_code = 6


class UnobservedModifierError(TatesensError):
    """Refusal: an effect modifier that is not measured in the trial cannot be
    handled by either sensitivity-analysis method."""

    category = "unobserved-modifier"
    exit_code = 7
