"""Deterministic discrete-event recreation of a 2002-era grid production testbed."""

__version__ = "0.1.0"
