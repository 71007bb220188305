"""Exception types shared across the package."""


class GrowthMcError(Exception):
    """Base class for all package errors."""


class DataFormatError(GrowthMcError):
    """Input file violates the expected schema (header, tokens, structure)."""


class EmptyDatasetError(GrowthMcError):
    """No usable patients remain after parsing and exclusion."""


class DegenerateStandardizationError(GrowthMcError):
    """Pooled pressure or age variance is zero; z-scores are undefined."""


class InvalidParamsError(GrowthMcError):
    """Growth-curve parameters outside the domain of the requested operation."""


class StructuralError(GrowthMcError):
    """Inconsistent containers, e.g. random effects missing for a patient."""


class InitializationError(GrowthMcError):
    """No finite-density starting state found for a chain."""


class ZeroVarianceError(GrowthMcError):
    """A draw series is constant; autocorrelation-based diagnostics undefined."""


class FitStateError(GrowthMcError):
    """A fit directory is missing, incomplete, or inconsistent with its inputs."""
