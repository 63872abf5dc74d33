"""Exception types shared across the package."""


class MosaicError(Exception):
    """Base class for all package-specific errors."""


class EmptyInput(MosaicError):
    """Raised when an input stream contains zero valid rows."""


class SchemaError(MosaicError):
    """Raised when a declared column is absent or unparseable."""


class FrequencyOutOfRange(MosaicError):
    """Requested Fourier frequency index outside 1..floor((N-1)/2)."""


class DegeneratePeriodogram(MosaicError):
    """Periodogram vanishes at a requested frequency (e.g. constant series)."""


class TooShort(MosaicError):
    """Series too short for the requested spectral or unit-root analysis."""


class NonFiniteUpdate(MosaicError):
    """An SGD update produced a non-finite parameter entry."""

    def __init__(self, message, user=None, block_index=None, epoch=None):
        super().__init__(message)
        self.user = user
        self.block_index = block_index
        self.epoch = epoch


class NoEligibleUsers(MosaicError):
    """No user has both a positive and a negative training interaction."""


class EmptyFilter(MosaicError):
    """The memory filter removed every user; retraining is impossible."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
