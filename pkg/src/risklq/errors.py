"""Exception hierarchy shared by all risklq modules.

Each class maps to one failure category surfaced by the CLI as a distinct
exit code; library callers catch them individually.
"""


class RiskLqError(Exception):
    """Base class for all library errors."""


class StructuralError(RiskLqError):
    """Dimension mismatch or malformed matrix data."""


class ConfigurationError(RiskLqError):
    """Invalid option values (sample counts, tolerances, unknown modes)."""


class ScenarioParseError(RiskLqError):
    """Scenario file could not be parsed; message names the offending field."""


class AssumptionError(RiskLqError):
    """A required stabilizability/detectability/definiteness flag failed."""


class SingularityError(RiskLqError):
    """A matrix that must be inverted is singular or too ill conditioned."""


class NonConvergenceError(RiskLqError):
    """A fixed-point iteration exhausted its iteration budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InfeasibleError(RiskLqError):
    """The requested risk budget lies below the attainable infimum."""


class DivergenceError(RiskLqError):
    """A closed-loop simulation produced non-finite state values."""

    def __init__(self, message, first_bad_index=None):
        super().__init__(message)
        self.first_bad_index = first_bad_index


class BreakdownError(RiskLqError):
    """The exponential-cost recursion lost well-posedness before stage 0."""

    def __init__(self, message, failing_stage=None):
        super().__init__(message)
        self.failing_stage = failing_stage


class UnsupportedCaseError(RiskLqError):
    """The operation is defined only for a restricted noise class."""
