"""Exception types shared across the package."""


class CollapseLabError(Exception):
    """Base class for all collapselab errors."""


class FormatError(CollapseLabError):
    """A file or record did not parse under its declared format."""


class ValidationError(CollapseLabError):
    """A value violated a documented invariant or precondition."""


class InsufficientPoolError(CollapseLabError):
    """A pool was too small for a requested draw. Carries the deficit."""

    def __init__(self, message: str, deficit: int = 0):
        super().__init__(message)
        self.deficit = deficit


class FitError(CollapseLabError):
    """A kernel fit failed (degenerate data, numerical breakdown)."""


class UndefinedStatisticError(CollapseLabError):
    """A statistic is undefined for the given input (e.g. zero variance)."""
