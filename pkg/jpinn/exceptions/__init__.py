"""
Custom exceptions for the jPINN toolkit.

This package re-exports the exception hierarchy so callers can write
``from jpinn.exceptions import ConfigurationError``.
"""

from .base import (
    JPinnError,
    ConfigurationError,
    DataValidationError,
    SchemaError,
    NumericFailureError,
    DomainError,
    CFLViolationError,
)

__all__ = [
    "JPinnError",
    "ConfigurationError",
    "DataValidationError",
    "SchemaError",
    "NumericFailureError",
    "DomainError",
    "CFLViolationError",
]
