"""Exception hierarchy shared by all congesta modules."""


class CongestaError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(CongestaError):
    pass


class InvalidFieldError(CongestaError):
    """A volume or potential field took an inadmissible value (e.g. tau <= 0)."""


class SingularVolumeError(InvalidFieldError):
    pass


class DomainTruncatedError(CongestaError):
    """A sublevel set or contour reaches the edge of the computational box."""


class InsufficientCapacityError(CongestaError):
    """The requested mass N exceeds what the field can hold inside the box."""


class OutOfTableError(CongestaError):
    pass


class NoCurveError(CongestaError):
    pass


class ResolutionError(CongestaError):
    pass


class DegenerateNormalError(CongestaError):
    pass


class InconsistentSourceError(CongestaError):
    """The tangential source does not average to zero on its level curve."""


class InvalidCoefficientError(CongestaError):
    pass


class EscapeError(CongestaError):
    """A traced particle left the occupied domain."""


class OutOfDomainError(CongestaError):
    pass


class DegenerateEndpointError(CongestaError):
    pass
