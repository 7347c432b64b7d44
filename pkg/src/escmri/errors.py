"""Exception types shared across the package."""


class EscMriError(Exception):
    """Base class for all escmri errors."""


class FormatError(EscMriError):
    """A file does not match the expected on-disk layout or schema."""


class TruncationError(FormatError):
    """A file's payload does not match the size promised by its header."""


class DataError(EscMriError):
    """Array contents violate an invariant (non-finite samples, bad ranges)."""


class DimensionError(EscMriError):
    """Shapes or sizes of inputs are inconsistent."""


class DomainError(EscMriError):
    """A value lies outside the mathematical domain of an operation."""


class DegenerateError(EscMriError):
    """An input is degenerate (e.g. an all-zero coil matrix)."""


class IllConditionedError(EscMriError):
    """A linear solve is too ill-conditioned to trust."""


class DivergenceError(EscMriError):
    """An optimizer's objective blew up instead of decreasing."""


class StallError(EscMriError):
    """A line search (or damping schedule) could not make progress.

    Carries the best iterate seen so far in ``x`` and the iteration
    history in ``trace`` so callers can recover the partial result.
    """

    def __init__(self, message, x=None, trace=None):
        super().__init__(message)
        self.x = x
        self.trace = trace
