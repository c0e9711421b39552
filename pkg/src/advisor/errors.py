"""Domain error types shared across the package."""


class AdvisorError(Exception):
    """Base class for numerical/domain failures (CLI exit code 1)."""


class StallError(AdvisorError):
    """Speed below the invertibility floor: the car is only controllable when moving."""


class RankDeficient(AdvisorError):
    """Least-squares regressor matrix is numerically rank deficient."""


class ZeroVariance(AdvisorError):
    """A statistic that needs signal variance got a constant series."""


class SingularInnovation(AdvisorError):
    """Innovation covariance is not invertible."""


class AllWeightsVanished(AdvisorError):
    """Every mixture component's likelihood underflowed to zero."""


class CovarianceNotPSD(AdvisorError):
    """A covariance lost positive semi-definiteness beyond tolerance."""
