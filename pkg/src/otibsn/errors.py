"""Exception hierarchy shared across the package."""


class OtibsnError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(OtibsnError):
    """Cost matrix and marginal dimensions are inconsistent."""


class InvalidCost(OtibsnError):
    """Cost matrix contains NaN, infinite, or negative entries."""


class MarginalNotPositive(OtibsnError):
    """A marginal vector has a nonpositive entry."""


class MarginalNotNormalized(OtibsnError):
    """A marginal vector does not sum to one within tolerance."""


class NumericalOverflow(OtibsnError):
    """A stabilized kernel produced a non-finite value (bug signal)."""


class InconsistentSystem(OtibsnError):
    """Unshifted singular system with right-hand side outside the range."""


class NotPositiveDefinite(OtibsnError):
    """CG met a nonpositive curvature direction (bug signal)."""


class LineSearchStalled(OtibsnError):
    """Armijo backtracking exceeded its trial cap (bug signal)."""


class WarmStartStalled(OtibsnError):
    """Alternating dual updates hit the sweep cap before the tolerance."""


class NumericalFailure(OtibsnError):
    """A solver produced a non-finite objective."""


class OracleTooLarge(OtibsnError):
    """Instance exceeds the exact LP oracle's size cap."""


class OracleFailed(OtibsnError):
    """Exact LP oracle failed to certify optimality (bug signal)."""


class TestOnlyLimit(OtibsnError):
    """A test-only helper was called outside its supported range."""


class LoadError(OtibsnError):
    """An input file could not be read as a valid instance."""


class ClockError(OtibsnError):
    """Recorded wall time went backwards (bug signal)."""
