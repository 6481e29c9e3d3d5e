"""Model-free robust static hedging of two-date path-dependent options."""

__version__ = "0.1.0"
