"""Physics discovery from Euler-characteristic curves of simulated fields."""

__version__ = "0.1.0"
