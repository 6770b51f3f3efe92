"""Exception types raised across the package."""


class EvekfError(Exception):
    """Base class for all package errors."""


class ConfigError(EvekfError):
    pass


class DataError(EvekfError):
    pass


# geometry
class NotARotation(DataError, ValueError):
    pass


class NotSkew(DataError, ValueError):
    pass


class BehindCamera(DataError, ValueError):
    pass


class RayParallelToPlane(DataError, ValueError):
    pass


class OutsideMap(DataError, ValueError):
    pass


class AngleNearPi(RuntimeWarning):
    """Warning: recovered rotation angle is within 1e-3 of pi."""


# scene_map
class EmptyImage(DataError, ValueError):
    pass


class NoVisiblePixels(DataError):
    pass


class InsufficientSupport(DataError):
    pass


# event_model
class NonPositiveDepth(DataError, ValueError):
    pass


class NoPriorEvent(DataError):
    pass


class TooFewEvents(DataError):
    pass


class DegenerateHistogram(DataError):
    pass


# simulator
class NonMonotoneTimestamp(DataError, ValueError):
    pass


# filter
class DegenerateInnovationCovariance(DataError, ArithmeticError):
    pass


class FilterDivergence(EvekfError):
    """Too many events were skipped for the run to be meaningful."""


# harness
class NoOverlap(DataError):
    pass
