"""Exception hierarchy shared across the package."""


class FlowDepthError(Exception):
    """Base class for all library-specific errors."""


class InvalidInputError(FlowDepthError, ValueError):
    """An argument violates a documented precondition (shape, range, sign)."""


class BehindCameraError(FlowDepthError, ValueError):
    """A 3D point has non-positive depth in the observing camera."""


class DegenerateGeometryError(FlowDepthError, ValueError):
    """A geometric estimation problem is rank-deficient or otherwise unsolvable."""


class InsufficientDataError(FlowDepthError, ValueError):
    """Too few seeds/correspondences/samples to run an estimator."""


class UndefinedMetricError(FlowDepthError, ValueError):
    """A metric was requested over an empty evaluation set."""


class NumericalFailureError(FlowDepthError, RuntimeError):
    """An iterative solver produced non-finite values.

    The last finite iterate, when available, is attached as ``last_iterate``
    so callers can dump it for post-mortem inspection.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class DegenerateMotionWarning(UserWarning):
    """The fitted camera motion is ambiguous (e.g. near-pure rotation)."""
