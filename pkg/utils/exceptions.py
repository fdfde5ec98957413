"""
Custom exception classes for the TriDet detector.

This module defines all custom exceptions used throughout the package
so callers (and the CLI) can tell validation problems from internal faults.
"""

from typing import Optional, Any, Dict


class TriDetException(Exception):
    """Base exception class for all detector errors."""

    def __init__(self, message: str, error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        super().__init__(self.message)


class ConfigurationError(TriDetException):
    """Raised when a configuration value or combination is invalid."""
    pass


class UsageError(ConfigurationError):
    """Raised when command-line arguments cannot be parsed."""

    def __init__(self, message: str, usage: str = ""):
        super().__init__(message, error_code="USAGE")
        self.usage = usage


class DimensionError(TriDetException):
    """Raised when tensor shapes do not agree."""
    pass


class EmptyInputError(TriDetException):
    """Raised when an operation receives an empty temporal axis."""
    pass


class NumericError(TriDetException):
    """Raised when an operation receives non-finite values."""
    pass


class GraphStateError(TriDetException):
    """Raised when backward is requested without a recorded forward pass."""
    pass


class DataValidationError(TriDetException):
    """Raised when input data fails validation."""
    pass


class AnnotationError(DataValidationError):
    """Raised when an annotation file violates its schema."""
    pass


class DomainError(TriDetException):
    """Raised when a value lies outside a function's mathematical domain."""
    pass


class StorageError(TriDetException):
    """Raised when reading or writing files fails."""
    pass


class FormatError(StorageError):
    """Raised when a binary file has a bad header, shape or length."""
    pass


class GenerationError(TriDetException):
    """Raised when synthetic data cannot be generated under the given constraints."""
    pass


# Errors caused by user input rather than by a defect in the package.
VALIDATION_ERRORS = (ConfigurationError, DataValidationError, FormatError, GenerationError)
