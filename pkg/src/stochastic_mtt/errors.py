from typing import Any, Dict, Optional

(
    " errors.py Exception hierarchy shared by the models,"
    " filters, scenario loaders and the CLI."
)


class TrackingError(Exception):
    """Base class for every error raised by stochastic_mtt."""


class InvalidArgumentError(TrackingError, ValueError):
    """A caller supplied an argument outside the documented domain."""


class NumericalError(TrackingError, ArithmeticError):
    """A factorization or solve failed; ``diagnostics`` says where."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class UpdateRejected(NumericalError):
    """Raised when a filter refuses to commit an update."""


class DegenerateGeometryError(NumericalError):
    """Target and sensor coincide, so range or angles are undefined."""


class FormatError(TrackingError, ValueError):
    """An input file is missing a required column or is unreadable."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class ConfigError(TrackingError, ValueError):
    """Run configuration failed validation."""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        source: Optional[str] = None,
    ):
        self.message = message
        self.line = line
        self.source = source
        super().__init__(self.render())

    def render(self) -> str:
        prefix = self.source or "<config>"
        if self.line is not None:
            return f"{prefix}:{self.line}: {self.message}"
        return f"{prefix}: {self.message}"
