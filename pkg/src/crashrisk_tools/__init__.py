"""
crashrisk-tools - Real-time crash risk analysis for signalized intersections.

This package builds matched case-control datasets from intersection traffic,
signal, speed and weather streams, screens correlated variables, fits Bayesian
conditional logistic models and scores events by odds ratio. A deterministic
synthetic-world generator exercises the whole pipeline end to end.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
