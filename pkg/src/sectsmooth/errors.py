"""Exception types raised by the library.

Each carries enough context (worst point, achieved value, offending index)
for the CLI to embed a useful diagnostic in the run report.
"""

__all__ = [
    "SmootherError",
    "InvalidArgument",
    "InvalidRegion",
    "CoverGap",
    "CoverConstructionFailed",
    "TubeTooTight",
    "InvalidPartition",
    "SeamMismatch",
    "ConcatMismatch",
    "OutOfOverlap",
    "CoarseGrid",
    "ChartOverflow",
    "NeighborhoodViolation",
    "NotSmoothEndpoints",
    "SchemaError",
]


class SmootherError(Exception):
    """Base class; `kind` is a stable machine-readable tag."""

    kind = "error"

    def payload(self):
        return {"kind": self.kind, "message": str(self)}


class InvalidArgument(SmootherError, ValueError):
    kind = "invalid-argument"


class InvalidRegion(SmootherError):
    kind = "invalid-region"


class CoverGap(SmootherError):
    kind = "cover-gap"

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class CoverConstructionFailed(SmootherError):
    kind = "cover-construction-failed"

    def __init__(self, message, region=None):
        super().__init__(message)
        self.region = region


class TubeTooTight(SmootherError):
    kind = "tube-too-tight"

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class InvalidPartition(SmootherError):
    kind = "invalid-partition"


class SeamMismatch(SmootherError):
    kind = "seam-mismatch"


class ConcatMismatch(SmootherError):
    kind = "concat-mismatch"

    def __init__(self, message, junction=None):
        super().__init__(message)
        self.junction = junction


class OutOfOverlap(SmootherError):
    kind = "out-of-overlap"


class CoarseGrid(SmootherError):
    kind = "coarse-resolution"


class ChartOverflow(SmootherError):
    kind = "chart-overflow"


class NeighborhoodViolation(SmootherError):
    kind = "neighborhood-violation"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NotSmoothEndpoints(SmootherError):
    kind = "not-smooth-endpoints"


class SchemaError(SmootherError):
    kind = "schema-error"
