"""Exception hierarchy shared by all modules."""


class IcaeError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(IcaeError, ValueError):
    pass


class NumericError(IcaeError, FloatingPointError):
    pass


class ConfigurationError(IcaeError, ValueError):
    pass


class DataError(IcaeError, ValueError):
    pass


class NotInImageError(IcaeError, ValueError):
    """Raised when a point cannot be inverted back to a (content, condition) pair."""


class BandwidthError(IcaeError, ValueError):
    pass


class EstimationError(IcaeError, ValueError):
    pass


class TrainingError(IcaeError, RuntimeError):
    pass


class IngestionError(IcaeError, ValueError):
    pass
