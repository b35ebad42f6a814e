"""specsense: federated spectrum occupancy detection simulator."""

from __future__ import annotations

from importlib import metadata

try:  # pragma: no cover - best effort during development
    __version__ = metadata.version("specsense")
except metadata.PackageNotFoundError:  # pragma: no cover - local/dev installs
    __version__ = "0.1.0"

from .errors import ConfigError, DataError, DivergenceError, SpecsenseError
from .runner import SpecsenseRunner

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "SpecsenseError",
    "SpecsenseRunner",
    "__version__",
]
