"""Exception hierarchy shared by all helioaim modules."""


class HelioAimError(Exception):
    """Base class for library errors."""


class InvalidConfigError(HelioAimError, ValueError):
    pass


class DomainError(HelioAimError, ValueError):
    """Raised for physically meaningless inputs (sun below horizon, grazing rays)."""


class InvalidMeshError(HelioAimError, ValueError):
    pass


class ShapeError(HelioAimError, ValueError):
    pass


class TrainingDivergedError(HelioAimError, RuntimeError):
    pass


class EncodingError(HelioAimError, ValueError):
    pass


class InvalidTrustRegionError(EncodingError):
    pass


class BackendError(HelioAimError, RuntimeError):
    """The MILP backend could not be run or returned garbage."""


class UsageError(HelioAimError, ValueError):
    pass


class RunError(HelioAimError, RuntimeError):
    pass
