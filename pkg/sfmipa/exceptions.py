"""Custom exceptions for the SFMIPA simulator."""


class SfmError(Exception):
    """Base exception for all SFMIPA errors."""
    pass


class ScenarioError(SfmError):
    """Raised when a scenario cannot be used."""
    pass


class ScenarioParseError(ScenarioError):
    """Raised when a scenario file is not valid JSON or misses a field."""

    def __init__(self, message: str, path: str = "", line: int = 0, column: int = 0):
        location = path
        if line:
            location = f"{path}:{line}:{column}"
        super().__init__(f"{location}: {message}" if location else message)
        self.path = path
        self.line = line
        self.column = column


class ScenarioValidationError(ScenarioError):
    """Raised when a scenario violates one of its invariants."""
    pass


class SignalDomainError(SfmError):
    """Raised when a signal is evaluated outside its retained domain."""
    pass


class ModelViolationError(SfmError):
    """Raised when a model quantity leaves its admissible range (e.g. zero availability)."""
    pass


class SimulationError(SfmError):
    """Raised when a sample path cannot be advanced."""
    pass


class DegenerateEventError(SfmError):
    """Raised when an event-time derivative has a vanishing denominator."""
    pass


class EstimationError(SfmError):
    """Raised when a gradient estimate or comparison has no usable input."""
    pass


class OracleFailure(SfmError):
    """Raised when the finite-difference check rejects the IPA estimates."""
    pass
