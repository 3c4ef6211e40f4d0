"""Exception hierarchy shared by every module."""


class SigsiamError(Exception):
    """Base class for all package errors."""


class SchemaError(SigsiamError, ValueError):
    """Input has the wrong shape, length, or field values."""


class CapacityError(SigsiamError, ValueError):
    """A requested computation exceeds a configured size cap."""


class InsufficientDataError(SigsiamError, ValueError):
    """Too few samples for the requested operation."""


class StateError(SigsiamError, RuntimeError):
    """An object is used before it reached the required lifecycle stage."""


class ContractError(SigsiamError, RuntimeError):
    """A caller broke a usage contract, e.g. reused a stale forward cache."""


class StratificationError(SigsiamError, ValueError):
    """Cross-validation folds cannot be built for the given cohort."""


class ConfigError(SigsiamError, ValueError):
    """Invalid run configuration."""


class ConvergenceWarning(UserWarning):
    """Training loss stopped decreasing within the patience window."""
