"""Baum-Welch estimation lab for two-state Gaussian hidden Markov models."""

__version__ = "0.1.0"
