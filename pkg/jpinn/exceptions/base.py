"""
Base exception classes for the jPINN toolkit.

This module defines the exception hierarchy used across the numerical
engine, the data layer and the command-line surface. Every exception
carries a human-readable message, an optional details dictionary and the
process exit code the CLI reports for it.
"""

from typing import Any, Dict, List, Optional


class JPinnError(Exception):
    """
    Base exception class for all toolkit-specific errors.

    This is the root of the hierarchy. It provides a consistent interface
    for error reporting: a message, a details dictionary and an exit code.
    """

    exit_code: int = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        """
        Initialize the exception.

        Args:
            message: Human-readable error message.
            details: Optional dictionary with additional error details.
        """
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        """Return string representation of the exception."""
        if self.details:
            return f"{self.message} (Details: {self.details})"
        return self.message


class ConfigurationError(JPinnError):
    """
    Exception raised for configuration-related errors.

    Raised for invalid settings or run configurations, unknown config
    keys, network width mismatches and split layouts that cannot satisfy
    the requested training policy.
    """

    exit_code = 2


class DataValidationError(JPinnError):
    """
    Exception raised when a dataset fails schema or row-level validation.

    Row-level problems are collected in ``row_errors`` so that every
    offending row of a CSV file can be reported at once.
    """

    exit_code = 3

    def __init__(
        self,
        message: str,
        row_errors: Optional[List[Dict[str, Any]]] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        """
        Initialize the data validation exception.

        Args:
            message: Human-readable error message.
            row_errors: List of ``{"row", "field", "message"}`` entries.
            details: Optional dictionary with additional error details.
        """
        super().__init__(message, details)
        self.row_errors = row_errors or []


class SchemaError(DataValidationError):
    """Raised when arrays that must be aligned (e.g. ensemble targets) are not."""


class NumericFailureError(JPinnError):
    """
    Exception raised when a computation produces a non-finite value.

    Carries the tape node, sample index or epoch/batch position where the
    failure was detected, when known.
    """

    exit_code = 4

    def __init__(
        self,
        message: str,
        node: Optional[str] = None,
        sample: Optional[int] = None,
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        """
        Initialize the numeric failure exception.

        Args:
            message: Human-readable error message.
            node: Description of the tape node that failed (op name and id).
            sample: Index of the offending sample within its batch.
            epoch: Training epoch in which the failure happened.
            batch: Mini-batch index in which the failure happened.
            details: Optional dictionary with additional error details.
        """
        merged = dict(details or {})
        for key, value in (("node", node), ("sample", sample), ("epoch", epoch), ("batch", batch)):
            if value is not None:
                merged.setdefault(key, value)
        super().__init__(message, merged)
        self.node = node
        self.sample = sample
        self.epoch = epoch
        self.batch = batch


class DomainError(NumericFailureError):
    """Raised when a primitive is evaluated outside its domain (log of x <= 0)."""


class CFLViolationError(NumericFailureError):
    """
    Exception raised when a simulation grid violates its stability bounds.

    The name and value of the violating ratio are kept so the CLI can
    print them before exiting.
    """

    def __init__(self, message: str, ratio_name: str, ratio: float, limit: float):
        """
        Initialize the stability exception.

        Args:
            message: Human-readable error message.
            ratio_name: Name of the violated ratio (advection, diffusion, positivity).
            ratio: Observed value of the ratio.
            limit: Maximum allowed value.
        """
        super().__init__(message, details={"ratio_name": ratio_name, "ratio": ratio, "limit": limit})
        self.ratio_name = ratio_name
        self.ratio = ratio
        self.limit = limit
