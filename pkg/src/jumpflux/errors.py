"""Exception types shared across the package."""


class JumpfluxError(Exception):
    """Base class for all package-specific errors."""


class SimulationConfigError(JumpfluxError, ValueError):
    """Inconsistent dimensions, grids, or parameter combinations."""


class UnsupportedMeasureError(JumpfluxError, ValueError):
    """Jump-intensity measure outside the finite-activity catalogue."""


class UnsupportedFamilyError(JumpfluxError, ValueError):
    """Coefficient family outside the admissible catalogue."""


class GridMismatchError(JumpfluxError, ValueError):
    """Paths or records that do not share the same time grid."""


class DegenerateFitError(JumpfluxError, ValueError):
    """Rate fit requested on data without a well-defined log-log slope."""
