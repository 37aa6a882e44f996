"""Closed-end sequential monitoring of mean shifts in high-dimensional streams."""

__version__ = "0.1.0"

from .streamcore import (  # noqa: E402
    ConfigError,
    CusumState,
    DataError,
    MonitorConfig,
    MonitorError,
    Observation,
)
