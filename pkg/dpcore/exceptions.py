class PrivacyError(Exception):
    """Base class for every error raised by the privacy primitives."""

    pass


class InvalidParameterError(PrivacyError, ValueError):
    pass


class InvalidDataError(PrivacyError, ValueError):
    pass


class InvalidWeightError(InvalidParameterError):
    pass


class InvalidStatisticsError(InvalidParameterError):
    pass


class UnsupportedForPureDPError(PrivacyError):
    pass


class NoiseOffRefusedError(PrivacyError):
    """Raised when a noise-off random source reaches a publishing path."""

    pass


class BudgetExceededError(PrivacyError):
    """Raised when a charge would overdraw the remaining budget.

    Attributes:
        requested -- the epsilon that was asked for
        remaining -- the epsilon left on the ledger
    """

    def __init__(self, message: str, requested: float, remaining: float):
        super().__init__(message)
        self.requested = requested
        self.remaining = remaining


class DuplicateQueryError(PrivacyError):
    pass


class LedgerClosedError(PrivacyError):
    pass


class EmptyGroupError(PrivacyError):
    pass


class UnstableBoundsError(PrivacyError):
    """Raised when the bound search runs out of steps.

    Attributes:
        last_candidate -- the upper bound evaluated at the final step
    """

    def __init__(self, message: str, last_candidate: float):
        super().__init__(message)
        self.last_candidate = last_candidate


class HarnessError(PrivacyError):
    """Raised when a mechanism under test fails mid-trial."""

    pass
