"""
Exception types shared by the auditing library.

The CLI maps ConfigurationError to exit code 2 and every other AuditError
to exit code 3.
"""


class AuditError(Exception):
    """Base class for all errors raised by the library."""
    pass


class ConfigurationError(AuditError):
    """Raised when dimensions, budgets or settings are inconsistent."""
    pass


class InputError(AuditError):
    """Raised when an argument is outside the accepted input range."""
    pass


class DomainError(AuditError):
    """Raised when a numeric argument is outside a function's domain."""
    pass


class TrainingError(AuditError):
    """Raised when training produces a non-finite loss."""
    pass


class ReportError(AuditError):
    """Raised when a result cannot be reported (empty or partial)."""
    pass
