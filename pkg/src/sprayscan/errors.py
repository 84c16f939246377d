"""Exception types raised across the scanning pipeline."""


class ScanError(Exception):
    """Base class for all pipeline errors."""


class DegenerateProjection(ScanError):
    """Point lies on the camera's principal plane (homogeneous w ~ 0)."""


class DegenerateCamera(ScanError):
    """Projection matrix is rank deficient or has no finite centre."""


class NoConvergence(ScanError):
    """Iterative undistortion did not settle within the iteration budget."""


class TooFewPoints(ScanError):
    pass


class CollinearPoints(ScanError):
    pass


class ParallelRay(ScanError):
    """Ray is parallel to the laser plane."""


class BehindCamera(ScanError):
    """Ray/plane intersection lies behind the ray origin (t < 0)."""


class CalibrationError(ScanError):
    """Calibration file failed validation; ``field`` names the culprit."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class EmptyMatrix(ScanError):
    pass


class DegenerateGeometry(ScanError):
    pass


class NoValidCells(ScanError):
    pass


class Untrained(ScanError):
    pass


class UnknownClass(ScanError):
    pass


class ImplausibleFit(ScanError):
    """Plane residual too large to trust the slope estimate."""


class NeverVisible(ScanError):
    """Simulated workpiece never crosses the laser plane inside the view."""
