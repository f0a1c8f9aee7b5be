"""Exception types shared across the package."""


class ForgeSegError(Exception):
    """Base class for all package errors."""


class ValidationError(ForgeSegError):
    """Invalid values, shapes within range but semantically wrong, bad config keys."""


class DimensionError(ForgeSegError):
    """Array shape mismatch between inputs that must agree."""


class CapabilityError(ForgeSegError):
    """Requested operation needs a branch or feature the model was built without."""


class IntegrityError(ForgeSegError):
    """Stored artifact is corrupt or does not match its recorded config hash."""


class DependencyError(ForgeSegError):
    """A pipeline stage is missing an artifact a previous stage should have produced."""


class NumericalError(ForgeSegError):
    """Non-finite loss or gradient encountered."""
