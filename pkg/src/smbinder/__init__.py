"""Grouped spatial modulation over crosstalk-coupled DSL binders:
channel synthesis, detection, capacity and energy-efficiency estimation,
and a deterministic sweep harness."""

__version__ = "0.1.0"
