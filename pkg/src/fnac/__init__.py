"""Fitted natural actor-critic for intraday FX trading with size-dependent fees."""

__version__ = "0.1.0"
