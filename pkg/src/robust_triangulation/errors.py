"""Exception types raised across the package."""


class TriangulationError(Exception):
    """Base class for all package errors."""


class NonRotation(TriangulationError, ValueError):
    pass


class BadIntrinsics(TriangulationError, ValueError):
    pass


class SizeMismatch(TriangulationError, ValueError):
    pass


class TooFewViews(TriangulationError, ValueError):
    pass


class DuplicateView(TriangulationError, ValueError):
    pass


class DegenerateRay(TriangulationError, ValueError):
    pass


class TooFewRays(TriangulationError, ValueError):
    pass


class ZeroBaseline(TriangulationError, ValueError):
    pass


class SingularDepth(TriangulationError, ArithmeticError):
    pass


class RefinementCollapsed(TriangulationError):
    pass


class PointAtInfinity(TriangulationError, ArithmeticError):
    pass


class SingularSystem(TriangulationError, ArithmeticError):
    pass


class EmptySpec(TriangulationError, ValueError):
    pass


class AllCellsEmpty(TriangulationError, ValueError):
    pass


class TooFewInliers(TriangulationError, ValueError):
    pass


class InvalidGrid(TriangulationError, ValueError):
    pass


class VisibilityTimeout(TriangulationError, RuntimeError):
    pass


class VersionMismatch(TriangulationError, ValueError):
    pass


class ShapeMismatch(TriangulationError, ValueError):
    pass


class NonMonotoneGrid(TriangulationError, ValueError):
    pass


class DatasetError(TriangulationError, ValueError):
    """Malformed camera or track input; carries the offending line number."""

    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.path = path
        self.line = line
