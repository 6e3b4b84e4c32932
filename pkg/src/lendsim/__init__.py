"""Agent-based liquidation-risk simulator for multi-asset over-collateralized lending markets."""

__version__ = "0.1.0"
