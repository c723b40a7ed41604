"""Optimal PMU placement for line-outage detection and identification."""

__version__ = "0.1.0"
