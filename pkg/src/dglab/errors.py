"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
onto its documented exit statuses without inspecting messages.
"""

from __future__ import annotations


class DGLabError(Exception):
    """Base class for all library errors."""

    exit_code = 3
    kind = "internal-error"


class InvalidParameter(DGLabError, ValueError):
    exit_code = 1
    kind = "invalid-parameter"


class DomainError(InvalidParameter):
    kind = "domain-error"


class PreconditionViolation(InvalidParameter):
    kind = "precondition-violation"


class SizeLimitError(InvalidParameter):
    kind = "size-limit"


class SeriesDivergence(InvalidParameter):
    kind = "series-divergence"


class ZeroModeDivergence(InvalidParameter):
    kind = "zero-mode-divergence"


class SubcriticalParameter(InvalidParameter):
    kind = "subcritical-parameter"


class DependencyError(InvalidParameter):
    kind = "dependency-error"


class ConstructionFailure(DGLabError, ArithmeticError):
    kind = "construction-failure"


class LogDomainError(DGLabError, ArithmeticError):
    kind = "log-domain"


class WindowTooSmall(DGLabError, ArithmeticError):
    """Truncation window leaves too much Gaussian tail mass."""

    kind = "increase-window"


class SamplingError(DGLabError, ArithmeticError):
    kind = "sampling-error"


class InsufficientSampling(DGLabError, ArithmeticError):
    exit_code = 2
    kind = "insufficient-sampling"


class ChecksumError(DGLabError, IOError):
    exit_code = 1
    kind = "checksum-failure"
