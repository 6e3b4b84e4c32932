"""Exception hierarchy shared by every module."""


class LendsimError(Exception):
    """Base class for all simulator errors."""


class InvalidInputError(LendsimError, ValueError):
    pass


class InfeasibleSwapError(LendsimError):
    """Total fees consume the whole seized amount (repay would be <= 0)."""


class InfeasibleRepayError(LendsimError):
    """No seize amount can produce the requested repay amount."""


class StalePlanError(LendsimError):
    """A liquidation plan no longer satisfies its constraints at current prices."""


class HistoryFormatError(LendsimError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingAssetError(LendsimError):
    pass


class InsufficientDataError(LendsimError):
    pass


class CannotRescaleError(LendsimError):
    pass


class GenerationError(LendsimError):
    pass


class EnsembleError(LendsimError):
    pass


class ConfigError(LendsimError):
    pass
