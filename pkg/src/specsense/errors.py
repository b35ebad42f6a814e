"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class SpecsenseError(Exception):
    """Base class for every error raised on purpose by specsense."""

    exit_code = 2


class ConfigError(SpecsenseError, ValueError):
    """Invalid or incomplete configuration."""

    exit_code = 1


class DataError(SpecsenseError, ValueError):
    """Input data violates a precondition (empty, malformed, degenerate)."""

    exit_code = 2


class DivergenceError(SpecsenseError, ArithmeticError):
    """Numerical failure during training."""

    exit_code = 3


__all__ = ["ConfigError", "DataError", "DivergenceError", "SpecsenseError"]
