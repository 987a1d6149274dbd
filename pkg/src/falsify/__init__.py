"""Deterministic falsification engine for intraday OHLCV trading signals."""

__version__ = "0.1.0"
