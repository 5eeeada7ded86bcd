"""Sampled tools for incremental stability of nonlinear control systems."""
__version__ = "0.1.0"
