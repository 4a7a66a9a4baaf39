"""Physics-informed neural networks for SIR-type epidemic inverse problems."""

__version__ = "0.1.0"

from .errors import ConfigError, DivergedLoss, EpiPinnError  # noqa: E402

__all__ = ["ConfigError", "DivergedLoss", "EpiPinnError", "__version__"]
