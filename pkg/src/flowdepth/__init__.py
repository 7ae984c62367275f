"""Flow-supervised depth recovery for indoor scenes.

The package provides the deterministic machinery of an optical-flow-driven
depth pipeline: rigid-flow view-synthesis geometry, differentiable warping
and losses, sparse-to-dense flow propagation, pure-rotation filtering, an
EPnP-based ground-truth flow oracle, per-scene depth/pose optimization, and
a synthetic indoor-scene generator that supplies exact labels for all of it.
"""

from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    DegenerateMotionWarning,
    FlowDepthError,
    InsufficientDataError,
    InvalidInputError,
    NumericalFailureError,
    UndefinedMetricError,
)
from .geometry import Intrinsics, PoseSE3

__version__ = "0.1.0"

__all__ = [
    "Intrinsics",
    "PoseSE3",
    "FlowDepthError",
    "InvalidInputError",
    "BehindCameraError",
    "DegenerateGeometryError",
    "DegenerateMotionWarning",
    "InsufficientDataError",
    "NumericalFailureError",
    "UndefinedMetricError",
    "__version__",
]
