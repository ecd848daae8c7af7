"""Exception types shared across the package."""


class DataError(Exception):
    """Invalid, inconsistent, or out-of-contract input data."""


class ParseError(DataError):
    """Malformed sessions CSV. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(Exception):
    """A numerical procedure failed: non-finite posterior, degenerate
    diagnostic input, failed convergence check, or an oracle out of tolerance."""
