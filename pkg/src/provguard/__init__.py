"""Provenance-graph APT detection with Poisson neighborhood encoding,
Bayesian-uncertainty classification and activation-distance explanations."""

__version__ = "0.1.0"
