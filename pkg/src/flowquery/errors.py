"""Exception types shared across the package."""


class FlowQueryError(Exception):
    """Base class for all package errors."""


class BadParam(FlowQueryError):
    """An argument violates a documented precondition."""


class OutOfDomain(FlowQueryError):
    """A query point lies outside the field's bounding box."""


class FormatError(FlowQueryError):
    """A file payload does not match its declared layout."""


class IoError(FlowQueryError):
    """Underlying I/O failure while reading or writing artifacts."""


class DegenerateSegment(FlowQueryError):
    """A segment with zero arc length cannot be resampled or normalized."""


class ShapeMismatch(FlowQueryError):
    """Array shapes of compared quantities do not agree."""


class EmptyQuery(FlowQueryError):
    """Query text is empty."""


class EmptyIndex(FlowQueryError):
    """The match index holds no entries."""


class ServiceUnavailable(FlowQueryError):
    """A required external endpoint is not configured or not reachable."""


class Timeout(FlowQueryError):
    """An external call did not complete within its deadline."""


class BadResponse(FlowQueryError):
    """An external endpoint returned a non-conforming payload."""


class BindError(FlowQueryError):
    """The HTTP service could not bind its address."""


class ConfigError(FlowQueryError):
    """Service configuration is invalid or incomplete."""
