"""Exception types raised across the simulator."""


class DmimocalError(Exception):
    """Base class for all simulator errors."""


class InvalidConfigError(DmimocalError):
    """A configuration value violates a documented invariant."""


class PlacementInfeasibleError(DmimocalError):
    """Node placement could not satisfy the separation constraint within the retry cap."""


class CovarianceError(DmimocalError):
    """A shadow-fading covariance failed to factor even after jitter."""


class DegenerateChannelError(DmimocalError):
    """An inter-AP channel is zero (no singular direction / no power split possible)."""


class MeasurementDegenerateError(DmimocalError):
    """The matched filter for a calibration measurement has zero energy."""


class FilterSingularError(DmimocalError):
    """The Kalman innovation covariance is singular."""


class UnsolvableError(DmimocalError):
    """The phase solve is rank deficient (disconnected measurement graph)."""


class ScheduleIncompleteError(DmimocalError):
    """Some graph edge receives no bidirectional measurement within a frame."""


class StatisticsUnstableError(DmimocalError):
    """Too few frames were simulated for stable residual-phase statistics."""
