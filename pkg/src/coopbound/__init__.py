"""Localization error bounds and estimators for large cooperative networks."""
__version__ = "0.1.0"
