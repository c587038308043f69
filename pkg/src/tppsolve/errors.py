"""Exception taxonomy shared across the toolkit.

The CLI maps these onto process exit codes: validation failures exit 2,
infeasibility and solver failures exit 3, bad command lines exit 4.
"""


class TppError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(TppError):
    """An instance violates its structural contract.

    Carries the full list of violations so callers can report all of
    them at once instead of fixing one at a time.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid instance")


class ParseError(TppError):
    """A serialized instance could not be read. Mentions the line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedFormatError(ParseError):
    """The file is recognizably not in a supported format."""


class InfeasibleRouteError(TppError):
    """A visited market set cannot cover some product's demand."""

    def __init__(self, product: int, shortfall: int):
        self.product = product
        self.shortfall = shortfall
        super().__init__(
            f"visited markets cannot cover product {product} "
            f"(short {shortfall} units)"
        )


class IllegalActionError(TppError):
    """A masked action was fed to the environment."""


class SolverError(TppError):
    """An exact solver could not run (size guard, missing model, ...)."""
