"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid configuration or input data.

    Raised when a file, config section, or argument fails a structural
    check before any computation starts.  The CLI maps this to exit
    code 1; every other failure maps to exit code 2.
    """


class DegenerateValuesError(ValueError):
    """A statistic is undefined for the supplied values (e.g. constant vector)."""
