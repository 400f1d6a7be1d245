"""Spectral band reduction and transfer learning for hyperspectral pixel classification."""

from hsitransfer.errors import (
    ConfigError,
    DataError,
    FormatError,
    InsufficientSpectralExtent,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "InsufficientSpectralExtent",
    "__version__",
]
