"""Exception hierarchy shared across the package."""


class BaafError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(BaafError):
    """An argument violates an operation's contract."""


class DataError(BaafError):
    """A file or payload is missing, malformed, or internally inconsistent."""


class DegenerateError(BaafError):
    """A computation collapsed numerically.

    Raised for identical-value mixture fits, singular covariances,
    coincident mixture components, and a filter that removed every sample.
    """
