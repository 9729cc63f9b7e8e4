"""Receptivity-aware intervention delivery engine and field-study simulator."""

__version__ = "0.1.0"
