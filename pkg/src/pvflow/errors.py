"""Exception types shared across the package.

Class names follow the error identifiers used throughout the public API so
that callers can match on them directly (and CLI messages carry the name).
"""


class PvflowError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PvflowError):
    """Operand shapes do not chain or do not match."""


class KTooLarge(PvflowError):
    """Requested neighbor count k >= number of points. Retry with k = N-1."""


class UnequalSizes(PvflowError):
    """Source and target clouds must contain the same number of points."""


class UnrecordedNode(PvflowError):
    """backward() was asked about a value the tape never produced."""


class BadMagic(PvflowError):
    """File does not start with the expected magic bytes."""


class TruncatedFile(PvflowError):
    """File ended before the declared payload was complete."""


class NonFiniteValue(PvflowError):
    """A NaN or infinity appeared where only finite values are allowed."""
