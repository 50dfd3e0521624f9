"""Exception hierarchy; the CLI maps these onto process exit codes."""

from __future__ import annotations


class PanelThreshError(Exception):
    """Base class for all package errors."""


class ConfigError(PanelThreshError):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(PanelThreshError):
    """Malformed or unbalanced input data (CLI exit code 3)."""


class EstimationError(PanelThreshError):
    """Estimation failed: rank deficiency, empty regime, degenerate grid (CLI exit code 4)."""
