"""Exception types raised across the package."""


class EpiPinnError(Exception):
    """Base class for all package errors."""


class ConfigError(EpiPinnError, ValueError):
    """Invalid scenario, configuration or command-line input."""


class StepTooLarge(EpiPinnError):
    """An integrated state left the admissible range (|x| > 10 N)."""


class NonFiniteState(EpiPinnError):
    """An integrated state became NaN or infinite."""


class InvalidArchitecture(ConfigError):
    pass


class ShapeMismatch(EpiPinnError, ValueError):
    pass


class LengthMismatch(EpiPinnError, ValueError):
    pass


class SigmaUnderflow(EpiPinnError):
    """The hospitalization-fraction network fell below the division floor."""


class ZeroReferenceNorm(EpiPinnError, ValueError):
    pass


class EmptyWindow(EpiPinnError, ValueError):
    pass


class OutOfWindow(EpiPinnError, ValueError):
    pass


class NegativeMean(EpiPinnError, ValueError):
    pass


class WrongCadence(EpiPinnError, ValueError):
    pass


class MissingColumn(EpiPinnError, ValueError):
    pass


class NonContiguousDates(EpiPinnError, ValueError):
    pass


class NegativeCount(EpiPinnError, ValueError):
    pass


class DivergedLoss(EpiPinnError):
    """Training loss blew up relative to its first epoch."""
