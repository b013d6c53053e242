"""Exception hierarchy shared by every layer of the package."""


class GibbsLdpError(Exception):
    """Base class for all package errors."""


class ConfigError(GibbsLdpError, ValueError):
    """Invalid model, window or experiment configuration (CLI exit code 1)."""


class EstimatorFailure(GibbsLdpError, RuntimeError):
    """An estimator ran but could not produce a value (CLI exit code 2)."""


class InvariantViolation(GibbsLdpError, AssertionError):
    """A verified inequality or identity failed (CLI exit code 3)."""


# geometry
class PointOutsideWindow(ConfigError):
    pass


class RadiusTooLarge(ConfigError):
    pass


class SideTooLarge(ConfigError):
    pass


class DuplicatePoints(ConfigError):
    pass


# models
class MissingBoundaryCondition(ConfigError):
    pass


class WrongPointCount(ConfigError):
    pass


# samplers
class InfeasibleStart(EstimatorFailure):
    pass


class NonFiniteEnergy(ConfigError):
    pass


class PreconditionViolated(ConfigError):
    pass


# diagnostics
class WindowTooSmall(ConfigError):
    pass


class DensityExceedsCubes(ConfigError):
    pass


class OutOfRegime(ConfigError):
    pass


class EventNotSatisfied(PreconditionViolated):
    pass


# estimation
class AllZeroWeights(EstimatorFailure):
    pass


class ZeroHits(EstimatorFailure):
    pass


# config parsing
class UnknownKey(ConfigError):
    pass


class TypeMismatch(ConfigError):
    pass


class ConstraintViolated(ConfigError):
    pass


class IntensityAssumptionViolated(ConstraintViolated):
    """The hard-core packing condition lambda * v_d * R^d < 1 fails."""
